#pragma once

// Lossy YCC color transform and patch extraction. The transform maps 8-bit
// RGB through a reversible linear map into [-1, 1]^3 and quantizes each
// channel into 256 uniform bins.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>

#include "pcem/dataset.hpp"

namespace pcem {

/// Linear part of the transform on [0,1] inputs. The published formula adds
/// one in the luma line, which lands y in [1, 3]; the default subtracts it so
/// all three channels share the [-1, 1] range the quantizer expects.
/// `as_printed` keeps the additive form for literal reproduction.
inline std::array<double, 3> ycc_forward_unquantized(double r, double g, double b,
                                                     bool as_printed = false) {
  const double co = r - b;
  const double tmp = b + co / 2.0;
  const double cg = g - tmp;
  const double y = tmp * 2.0 + cg + (as_printed ? 1.0 : -1.0);
  return {y, co, cg};
}

/// Exact inverse of the unquantized map, back to [0,1] RGB.
inline std::array<double, 3> ycc_inverse_unquantized(double y, double co, double cg,
                                                     bool as_printed = false) {
  const double tmp = (y - cg - (as_printed ? 1.0 : -1.0)) / 2.0;
  const double g = cg + tmp;
  const double b = tmp - co / 2.0;
  const double r = co + b;
  return {r, g, b};
}

/// 256 uniform bins over [-1, 1]; the upper endpoint clamps into bin 255.
inline std::uint8_t ycc_quantize(double v) {
  const double bin = std::floor((v + 1.0) / 2.0 * 256.0);
  return static_cast<std::uint8_t>(std::clamp(bin, 0.0, 255.0));
}

struct Ycc {
  std::uint8_t y = 0, co = 0, cg = 0;
};

inline Ycc ycc_transform(std::uint8_t r, std::uint8_t g, std::uint8_t b,
                         bool as_printed = false) {
  const auto [y, co, cg] =
      ycc_forward_unquantized(r / 255.0, g / 255.0, b / 255.0, as_printed);
  return {ycc_quantize(y), ycc_quantize(co), ycc_quantize(cg)};
}

/// Splits row-major H x W x 3 RGB images into patch x patch tiles; each tile
/// becomes one dataset row of patch*patch*3 256-ary variables, channel-major
/// within a pixel and row-major over pixels, with the YCC transform applied
/// per pixel.
inline Dataset patchify(std::span<const std::uint8_t> images, std::size_t count,
                        std::size_t height, std::size_t width, std::size_t patch = 16,
                        bool as_printed = false) {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw std::invalid_argument("image size must be divisible by the patch size");
  if (images.size() != count * height * width * 3)
    throw std::invalid_argument("image buffer does not match count * H * W * 3");

  const std::size_t vars = patch * patch * 3;
  Dataset out(std::vector<VarDomain>(vars, VarDomain::categorical(256)));
  std::vector<double> row(vars);
  for (std::size_t img = 0; img < count; ++img) {
    const std::uint8_t* base = images.data() + img * height * width * 3;
    for (std::size_t py = 0; py < height / patch; ++py) {
      for (std::size_t px = 0; px < width / patch; ++px) {
        std::size_t k = 0;
        for (std::size_t i = 0; i < patch; ++i) {
          for (std::size_t j = 0; j < patch; ++j) {
            const std::size_t y = py * patch + i, x = px * patch + j;
            const std::uint8_t* pix = base + (y * width + x) * 3;
            const Ycc ycc = ycc_transform(pix[0], pix[1], pix[2], as_printed);
            row[k++] = ycc.y;
            row[k++] = ycc.co;
            row[k++] = ycc.cg;
          }
        }
        out.append_row(row);
      }
    }
  }
  return out;
}

}  // namespace pcem
