#include "metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "error.hpp"

namespace roomseq {

namespace {

void require_same_size(const RasterImage& a, const RasterImage& b) {
  if (a.width != b.width || a.height != b.height)
    fail(ErrorCode::DimensionMismatch, "images differ in size: " + std::to_string(a.width) + "x" +
                                           std::to_string(a.height) + " vs " + std::to_string(b.width) +
                                           "x" + std::to_string(b.height));
}

// First pixel index whose center maps to a grid coordinate >= edge.
int first_pixel_at_or_after(double edge, int size) {
  // center(i) = (i + 0.5) * kGridSize / size >= edge
  const double scale = static_cast<double>(size) / kGridSize;
  int i = static_cast<int>(std::ceil(edge * scale - 0.5));
  return std::clamp(i, 0, size);
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w{};
  const int r = kSsimWindow / 2;
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - r;
    w[i] = std::exp(-(d * d) / (2 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Symmetric (edge-repeating) reflection of an index into [0, n).
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Separable Gaussian filter of a w x h field.
std::vector<double> blur(const std::vector<double>& f, int w, int h) {
  static const auto win = gaussian_window();
  const int r = kSsimWindow / 2;
  std::vector<double> tmp(f.size()), out(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) s += win[k + r] * f[static_cast<std::size_t>(y) * w + reflect(x + k, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) s += win[k + r] * tmp[static_cast<std::size_t>(reflect(y + k, h)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  return out;
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != d)
      fail(ErrorCode::DimensionMismatch, "feature vectors differ in length");
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd c = x.rowwise() - mean.transpose();
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

// Symmetric PSD square root; negative eigenvalues are rounding noise and
// clamp to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

std::uint8_t palette_intensity(RoomType type) {
  switch (type) {
    case RoomType::LivingRoom: return 200;
    case RoomType::MasterRoom: return 170;
    case RoomType::CommonRoom: return 150;
    case RoomType::Bedroom: return 140;
    case RoomType::Bathroom: return 110;
    case RoomType::Kitchen: return 80;
    case RoomType::Balcony: return 50;
  }
  return kBackground;
}

RasterImage RasterImage::filled(int width, int height, std::uint8_t value) {
  if (width < 1 || height < 1) fail(ErrorCode::InvalidArgument, "image dimensions must be positive");
  RasterImage img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<std::size_t>(width) * height, value);
  return img;
}

RasterImage rasterize(const FloorPlan& plan, int size) {
  RasterImage img = RasterImage::filled(size, size, kBackground);
  for (const auto& room : plan.rooms) {
    const Rect b = room_bounds(room);
    const int x0 = first_pixel_at_or_after(b.x_lo, size);
    const int x1 = first_pixel_at_or_after(b.x_hi, size);
    const int y0 = first_pixel_at_or_after(b.y_lo, size);
    const int y1 = first_pixel_at_or_after(b.y_hi, size);
    if (x0 >= x1 || y0 >= y1) continue;
    const std::uint8_t fill = palette_intensity(room.type);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const bool edge = x == x0 || x == x1 - 1 || y == y0 || y == y1 - 1;
        img.at(x, y) = edge ? kBorder : fill;
      }
  }
  return img;
}

std::string to_pgm(const RasterImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (int y = image.height - 1; y >= 0; --y)
    for (int x = 0; x < image.width; ++x) out.push_back(static_cast<char>(image.at(x, y)));
  return out;
}

void write_pgm(const std::string& path, const RasterImage& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write image: " + path);
  const auto data = to_pgm(image);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

double mse(const RasterImage& a, const RasterImage& b) {
  require_same_size(a, b);
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

double psnr(const RasterImage& a, const RasterImage& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / m));
}

double ssim(const RasterImage& a, const RasterImage& b) {
  require_same_size(a, b);
  if (a.width < kSsimWindow || a.height < kSsimWindow)
    fail(ErrorCode::TooSmall, "SSIM needs images of at least 11x11");
  const int w = a.width, h = a.height;
  const std::size_t n = a.pixels.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.pixels[i];
    y[i] = b.pixels[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = blur(x, w, h), my = blur(y, w, h);
  const auto exx = blur(xx, w, h), eyy = blur(yy, w, h), exy = blur(xy, w, h);
  constexpr double c1 = (0.01 * 255) * (0.01 * 255);
  constexpr double c2 = (0.03 * 255) * (0.03 * 255);
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    const double num = (2 * mx[i] * my[i] + c1) * (2 * sxy + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2);
    sum += num / den;
  }
  return sum / static_cast<double>(n);
}

std::vector<double> layout_features(const RasterImage& image) {
  if (image.width % kFeatureGrid != 0 || image.height % kFeatureGrid != 0)
    fail(ErrorCode::DimensionMismatch, "image size must be a multiple of 8");
  const int bw = image.width / kFeatureGrid, bh = image.height / kFeatureGrid;
  std::vector<double> f(kFeatureDim, 0.0);
  for (int by = 0; by < kFeatureGrid; ++by)
    for (int bx = 0; bx < kFeatureGrid; ++bx) {
      double s = 0;
      for (int y = by * bh; y < (by + 1) * bh; ++y)
        for (int x = bx * bw; x < (bx + 1) * bw; ++x) s += image.at(x, y);
      f[by * kFeatureGrid + bx] = s / (255.0 * bw * bh);
    }
  return f;
}

double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) fail(ErrorCode::TooFewSamples, "empty feature set");
  const std::size_t dim = a.front().size();
  if (b.front().size() != dim) fail(ErrorCode::DimensionMismatch, "feature sets differ in dimension");
  if (a.size() <= dim || b.size() <= dim)
    fail(ErrorCode::TooFewSamples, "each set needs more than " + std::to_string(dim) + " samples");
  const Eigen::MatrixXd xa = to_matrix(a), xb = to_matrix(b);
  const Eigen::VectorXd mu_a = xa.colwise().mean().transpose();
  const Eigen::VectorXd mu_b = xb.colwise().mean().transpose();
  const Eigen::MatrixXd sa = covariance(xa, mu_a), sb = covariance(xb, mu_b);
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  const double cross = trace_sqrt(ra * sb * ra);
  const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

ConstraintStats constraint_stats(const FloorPlan& plan) {
  ConstraintStats s;
  s.rooms = plan.rooms.size();
  for (const auto& r : plan.rooms)
    if (outside_area(r, plan.outline) > 0) ++s.rooms_outside;
  for (const auto& [i, j] : adjacency_pairs(plan)) {
    ++s.pairs;
    if (gap(plan.rooms[i], plan.rooms[j]) <= kAdjacencySatisfiedGap) ++s.pairs_satisfied;
  }
  for (std::size_t i = 0; i < plan.rooms.size(); ++i)
    for (std::size_t j = i + 1; j < plan.rooms.size(); ++j) {
      const auto& a = plan.rooms[i];
      const auto& b = plan.rooms[j];
      const double smaller = std::min(static_cast<double>(a.w) * a.h, static_cast<double>(b.w) * b.h);
      ++s.room_pairs;
      s.overlap_sum += overlap_area(a, b) / smaller;
    }
  return s;
}

MetricsReport evaluate_corpus(const std::vector<FloorPlan>& generated,
                              const std::vector<FloorPlan>& reference) {
  if (generated.size() != reference.size())
    fail(ErrorCode::DimensionMismatch, "generated and reference sets differ in size");
  if (generated.empty()) fail(ErrorCode::TooFewSamples, "nothing to evaluate");
  MetricsReport r;
  r.samples = generated.size();
  std::vector<std::vector<double>> fa, fb;
  ConstraintStats total;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto ga = rasterize(generated[i]);
    const auto gb = rasterize(reference[i]);
    r.psnr_mean += psnr(ga, gb);
    r.ssim_mean += ssim(ga, gb);
    fa.push_back(layout_features(ga));
    fb.push_back(layout_features(gb));
    const auto s = constraint_stats(generated[i]);
    total.rooms += s.rooms;
    total.rooms_outside += s.rooms_outside;
    total.pairs += s.pairs;
    total.pairs_satisfied += s.pairs_satisfied;
    total.room_pairs += s.room_pairs;
    total.overlap_sum += s.overlap_sum;
  }
  const double n = static_cast<double>(generated.size());
  r.psnr_mean /= n;
  r.ssim_mean /= n;
  if (fa.size() > kFeatureDim) r.frechet = frechet_distance(fa, fb);
  r.outline_violation_rate = total.rooms ? double(total.rooms_outside) / double(total.rooms) : 0.0;
  r.adjacency_satisfaction_rate = total.pairs ? double(total.pairs_satisfied) / double(total.pairs) : 1.0;
  r.mean_overlap = total.room_pairs ? total.overlap_sum / double(total.room_pairs) : 0.0;
  return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["psnr_mean"] = psnr_mean;
  j["ssim_mean"] = ssim_mean;
  j["frechet"] = frechet ? nlohmann::ordered_json(*frechet) : nlohmann::ordered_json(nullptr);
  j["outline_violation_rate"] = outline_violation_rate;
  j["adjacency_satisfaction_rate"] = adjacency_satisfaction_rate;
  j["mean_overlap"] = mean_overlap;
  j["metadata"] = {{"samples", samples},
                   {"raster_size", kGridSize},
                   {"palette_version", kPaletteVersion},
                   {"frechet_features", "8x8 block means"},
                   {"adjacency_gap", kAdjacencySatisfiedGap}};
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.psnr_mean = j.at("psnr_mean").get<double>();
    r.ssim_mean = j.at("ssim_mean").get<double>();
    if (!j.at("frechet").is_null()) r.frechet = j.at("frechet").get<double>();
    r.outline_violation_rate = j.at("outline_violation_rate").get<double>();
    r.adjacency_satisfaction_rate = j.at("adjacency_satisfaction_rate").get<double>();
    r.mean_overlap = j.at("mean_overlap").get<double>();
    if (j.contains("metadata")) r.samples = j["metadata"].value("samples", std::size_t{0});
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("metrics report: ") + e.what());
  }
}

}  // namespace roomseq
