#pragma once

// Pearson correlation between written voxels of a compounded volume and the
// phantom sampled at the same world points.

#include <cmath>

#include "dualtrack/compound.hpp"
#include "dualtrack/phantom.hpp"

namespace dualtrack::oracle {

inline double volume_phantom_correlation(const Volume& vol, const Phantom& phantom) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  long n = 0;
  for (int z = 0; z < vol.size[2]; ++z)
    for (int y = 0; y < vol.size[1]; ++y)
      for (int x = 0; x < vol.size[0]; ++x) {
        const std::size_t i = vol.index(x, y, z);
        if (!vol.written[i]) continue;
        const Eigen::Vector3d w = vol.voxel_center(x, y, z);
        if (!phantom.contains(w)) continue;
        const double a = vol.data[i], b = phantom.sample(w);
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
        ++n;
      }
  if (n < 2) return 0.0;
  const double cov = sab - sa * sb / n;
  const double va = saa - sa * sa / n, vb = sbb - sb * sb / n;
  return cov / std::sqrt(va * vb);
}

}  // namespace dualtrack::oracle
