#pragma once

// Raster-domain and vector-domain evaluation of generated plans: a fixed
// grayscale rasterizer, PSNR, SSIM, a Frechet layout distance over block
// features, and constraint-satisfaction statistics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geometry.hpp"

namespace roomseq {

inline constexpr int kPaletteVersion = 1;
inline constexpr std::uint8_t kBackground = 255;
inline constexpr std::uint8_t kBorder = 0;

std::uint8_t palette_intensity(RoomType type);

// Row r holds y in [r, r + 1) scaled to the image; row 0 is the south edge.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  static RasterImage filled(int width, int height, std::uint8_t value);
  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

// Rooms are painted in sequence order. A pixel belongs to a room when its
// center, mapped to grid units, lies in [x_lo, x_hi) x [y_lo, y_hi); the
// outermost pixels of each room are painted with the border intensity.
RasterImage rasterize(const FloorPlan& plan, int size = kGridSize);

// Binary PGM with the north edge on top.
std::string to_pgm(const RasterImage& image);
void write_pgm(const std::string& path, const RasterImage& image);

inline constexpr double kPsnrCap = 99.0;

double mse(const RasterImage& a, const RasterImage& b);
double psnr(const RasterImage& a, const RasterImage& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM with an 11x11 Gaussian window and symmetric padding.
double ssim(const RasterImage& a, const RasterImage& b);

inline constexpr int kFeatureGrid = 8;
inline constexpr int kFeatureDim = kFeatureGrid * kFeatureGrid;

// 8x8 block means of the raster, divided by 255.
std::vector<double> layout_features(const RasterImage& image);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with unbiased
// covariances. Each set needs more samples than feature dimensions.
double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b);

inline constexpr double kAdjacencySatisfiedGap = 4.0;

struct MetricsReport {
  double psnr_mean = 0;
  double ssim_mean = 0;
  std::optional<double> frechet;  // absent with too few samples
  double outline_violation_rate = 0;
  double adjacency_satisfaction_rate = 0;
  double mean_overlap = 0;
  std::size_t samples = 0;

  nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Per-plan constraint statistics of a set of plans.
struct ConstraintStats {
  std::size_t rooms = 0;
  std::size_t rooms_outside = 0;  // outside_area > 0
  std::size_t pairs = 0;
  std::size_t pairs_satisfied = 0;  // gap <= kAdjacencySatisfiedGap
  std::size_t room_pairs = 0;
  double overlap_sum = 0;  // overlap / smaller area, summed over room pairs
};

ConstraintStats constraint_stats(const FloorPlan& plan);

// Paired PSNR/SSIM on aligned indices, Frechet distance between the two
// populations, constraint statistics of `generated`.
MetricsReport evaluate_corpus(const std::vector<FloorPlan>& generated,
                              const std::vector<FloorPlan>& reference);

}  // namespace roomseq
