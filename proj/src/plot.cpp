#include "dualtrack/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dualtrack/error.hpp"

namespace dualtrack {

namespace fs = std::filesystem;

namespace {

constexpr double kW = 720, kH = 440, kLeft = 70, kRight = 170, kTop = 40, kBottom = 55;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

void open_svg(std::ofstream& out, const fs::path& path, const std::string& title) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out.open(path);
  require(static_cast<bool>(out), ErrorCategory::io_error, "cannot write " + path.string());
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
}

void legend(std::ofstream& out, int row, const std::string& label, const std::string& color, bool dashed) {
  const double x = kW - kRight + 15, y = kTop + 10 + 18 * row;
  out << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + 24 << "\" y2=\"" << y << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
  out << "<text x=\"" << x + 30 << "\" y=\"" << y + 4 << "\">" << escape(label) << "</text>\n";
}

}  // namespace

void write_line_plot(const fs::path& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series) {
  Range rx, ry;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), ErrorCategory::invalid_argument, "plot: x and y lengths differ");
    for (double v : s.x) rx.add(v);
    for (double v : s.y) ry.add(v);
  }
  rx.finish();
  ry.finish();
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
  auto py = [&](double v) { return kTop + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

  std::ofstream out;
  open_svg(out, path, title);
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double vx = rx.lo + (rx.hi - rx.lo) * i / 4.0, vy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
    out << "<text x=\"" << px(vx) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << fmt(vx)
        << "</text>\n";
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(vy) + 4 << "\" text-anchor=\"end\">" << fmt(vy)
        << "</text>\n";
    out << "<line x1=\"" << kLeft << "\" y1=\"" << py(vy) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << py(vy)
        << "\" stroke=\"#ddd\"/>\n";
  }
  out << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << escape(x_label)
      << "</text>\n";
  out << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    out << "\"/>\n";
    legend(out, static_cast<int>(k), s.label, s.color, s.dashed);
  }
  out << "</svg>\n";
}

void write_trajectory_plot(const fs::path& path, const std::string& title, const std::vector<TrajectoryTrace>& traces,
                           const Calibration& cal, int width, int height) {
  // Oblique projection: screen x = x + 0.5 z, screen y = -(y) + 0.35 z.
  auto project = [](const Eigen::Vector3d& p) { return Eigen::Vector2d(p.x() + 0.5 * p.z(), -p.y() + 0.35 * p.z()); };
  const auto pts = frame_points(cal, width, height);
  Range rx, ry;
  std::vector<std::vector<std::array<Eigen::Vector2d, 3>>> lines;
  for (const auto& t : traces) {
    std::vector<std::array<Eigen::Vector2d, 3>> per;
    for (const auto& pose : rebase_trajectory(t.poses)) {
      std::array<Eigen::Vector2d, 3> q{project(pose.apply(pts[0])), project(pose.apply(pts[1])),
                                       project(pose.apply(pts[4]))};
      for (const auto& v : q) rx.add(v.x()), ry.add(v.y());
      per.push_back(q);
    }
    lines.push_back(std::move(per));
  }
  rx.finish();
  ry.finish();
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double scale = std::min(pw / (rx.hi - rx.lo), ph / (ry.hi - ry.lo));
  auto px = [&](double v) { return kLeft + (v - rx.lo) * scale; };
  auto py = [&](double v) { return kTop + (v - ry.lo) * scale; };

  std::ofstream out;
  open_svg(out, path, title);
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto& per = lines[k];
    const std::string& color = traces[k].color;
    for (std::size_t i = 0; i < per.size(); i += std::max<std::size_t>(1, per.size() / 16)) {
      out << "<line x1=\"" << px(per[i][0].x()) << "\" y1=\"" << py(per[i][0].y()) << "\" x2=\"" << px(per[i][1].x())
          << "\" y2=\"" << py(per[i][1].y()) << "\" stroke=\"" << color << "\" stroke-opacity=\"0.45\"/>\n";
    }
    for (int edge = 0; edge < 3; ++edge) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << (edge == 2 ? 2 : 1)
          << "\" points=\"";
      for (const auto& q : per) out << px(q[edge].x()) << "," << py(q[edge].y()) << " ";
      out << "\"/>\n";
    }
    legend(out, static_cast<int>(k), traces[k].label, color, false);
  }
  out << "<text x=\"" << kLeft << "\" y=\"" << kH - 12 << "\">oblique view, mm (first frame at origin)</text>\n";
  out << "</svg>\n";
}

}  // namespace dualtrack
