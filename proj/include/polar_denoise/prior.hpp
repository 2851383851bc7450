#pragma once

// Empirical prior: a finite atom cloud with uniform weights, plus synthetic
// generators, block-mean image discretisation, IDX ingestion and the
// "PDNZ" binary format.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polar_denoise/binary_io.hpp"
#include "polar_denoise/error.hpp"
#include "polar_denoise/rng.hpp"
#include "polar_denoise/vec.hpp"

namespace polar_denoise {

class EmpiricalPrior {
 public:
  EmpiricalPrior(int dim, std::vector<double> atoms, std::optional<std::vector<std::string>> labels = std::nullopt,
                 std::string source = {})
      : dim_(dim), atoms_(std::move(atoms)), labels_(std::move(labels)), source_(std::move(source)) {
    if (dim < 3) throw InvalidParameter("dim", "must be >= 3, got " + std::to_string(dim));
    if (atoms_.empty() || atoms_.size() % static_cast<std::size_t>(dim) != 0) {
      throw DimensionMismatch("EmpiricalPrior: atom storage of " + std::to_string(atoms_.size()) +
                              " values is not a positive multiple of dim " + std::to_string(dim));
    }
    if (labels_ && labels_->size() != size()) {
      throw DimensionMismatch("EmpiricalPrior: " + std::to_string(labels_->size()) + " labels for " +
                              std::to_string(size()) + " atoms");
    }
  }

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return atoms_.size() / static_cast<std::size_t>(dim_); }
  std::span<const double> atom(std::size_t i) const {
    return {atoms_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  const std::vector<double>& atom_data() const noexcept { return atoms_; }
  const std::optional<std::vector<std::string>>& labels() const noexcept { return labels_; }
  const std::string& source() const noexcept { return source_; }

  /// Index and distance of the closest atom; ties go to the lowest index.
  std::pair<std::size_t, double> nearest(std::span<const double> y) const {
    std::size_t best = 0;
    double best_sq = vec::distance_sq(atom(0), y);
    for (std::size_t i = 1; i < size(); ++i) {
      const double d2 = vec::distance_sq(atom(i), y);
      if (d2 < best_sq) {
        best_sq = d2;
        best = i;
      }
    }
    return {best, std::sqrt(best_sq)};
  }

 private:
  int dim_;
  std::vector<double> atoms_;
  std::optional<std::vector<std::string>> labels_;
  std::string source_;
};

// ---------------------------------------------------------------------------
// Synthetic generators

enum class SyntheticKind { two_point, sphere_shell, circle_embedded, affine_codim2, cluster_mixture };

using ShapeParams = std::map<std::string, double>;

inline std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::two_point: return "two_point";
    case SyntheticKind::sphere_shell: return "sphere_shell";
    case SyntheticKind::circle_embedded: return "circle_embedded";
    case SyntheticKind::affine_codim2: return "affine_codim2";
    case SyntheticKind::cluster_mixture: return "cluster_mixture";
  }
  return "unknown";
}

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  for (auto k : {SyntheticKind::two_point, SyntheticKind::sphere_shell, SyntheticKind::circle_embedded,
                 SyntheticKind::affine_codim2, SyntheticKind::cluster_mixture}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidParameter("kind", "unknown synthetic prior kind '" + s + "'");
}

namespace detail {

class ParamReader {
 public:
  ParamReader(const ShapeParams& params, std::initializer_list<const char*> allowed) : params_(params) {
    for (const auto& [key, value] : params) {
      bool known = false;
      for (const char* a : allowed) known = known || key == a;
      if (!known) throw InvalidParameter(key, "not a parameter of this generator");
      if (!std::isfinite(value)) throw InvalidParameter(key, "must be finite");
    }
  }
  double get(const char* key, double fallback) const {
    auto it = params_.find(key);
    return it == params_.end() ? fallback : it->second;
  }
  double positive(const char* key, double fallback) const {
    const double v = get(key, fallback);
    if (!(v > 0.0)) throw InvalidParameter(key, "must be > 0");
    return v;
  }

 private:
  const ShapeParams& params_;
};

inline void fill_unit_direction(Rng& rng, std::span<double> out) {
  std::normal_distribution<double> normal;
  double n2 = 0.0;
  do {
    for (auto& v : out) v = normal(rng);
    n2 = vec::norm_sq(out);
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& v : out) v *= inv;
}

}  // namespace detail

/// Deterministic synthetic atom clouds.
///
/// | kind            | parameters (defaults)                         | locus |
/// |-----------------|-----------------------------------------------|-------|
/// | two_point       | separation (2)                                | atoms alternate between -s/2 e1 and +s/2 e1 |
/// | sphere_shell    | radius (1)                                    | uniform on the sphere of that radius |
/// | circle_embedded | radius (1)                                    | circle in coordinates 0,1; requires dim >= 4 |
/// | affine_codim2   | spread (1), offset (0)                        | Gaussian in the first d-2 coordinates, last two fixed at offset |
/// | cluster_mixture | centers (2), spread (0.1), center_distance (1) | atom i ~ N(c_{i mod k}, spread^2 I), c_j = center_distance e_j |
///
/// A circle is polar in any d >= 3 (codimension 2 already in R^3), but d = 3
/// sits on the boundary of the codimension rule, so circle_embedded starts at 4.
/// cluster_mixture labels each atom with its cluster index.
inline EmpiricalPrior generate_synthetic(SyntheticKind kind, int dim, std::size_t n, std::uint64_t seed,
                                         const ShapeParams& params = {}) {
  if (dim < 3) throw InvalidParameter("dim", "must be >= 3");
  if (n < 1) throw InvalidParameter("n", "must be >= 1");
  const auto d = static_cast<std::size_t>(dim);
  Rng rng = make_stream(seed, streams::prior_generation);
  std::normal_distribution<double> normal;
  std::vector<double> atoms(n * d, 0.0);
  std::optional<std::vector<std::string>> labels;

  switch (kind) {
    case SyntheticKind::two_point: {
      detail::ParamReader p(params, {"separation"});
      const double half = 0.5 * p.positive("separation", 2.0);
      for (std::size_t i = 0; i < n; ++i) atoms[i * d] = (i % 2 == 0) ? -half : half;
      break;
    }
    case SyntheticKind::sphere_shell: {
      detail::ParamReader p(params, {"radius"});
      const double radius = p.positive("radius", 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        std::span<double> a(atoms.data() + i * d, d);
        detail::fill_unit_direction(rng, a);
        for (auto& v : a) v *= radius;
      }
      break;
    }
    case SyntheticKind::circle_embedded: {
      detail::ParamReader p(params, {"radius"});
      if (dim < 4) throw InvalidParameter("dim", "circle_embedded requires dim >= 4");
      const double radius = p.positive("radius", 1.0);
      std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = angle(rng);
        atoms[i * d] = radius * std::cos(t);
        atoms[i * d + 1] = radius * std::sin(t);
      }
      break;
    }
    case SyntheticKind::affine_codim2: {
      detail::ParamReader p(params, {"spread", "offset"});
      const double spread = p.positive("spread", 1.0);
      const double offset = p.get("offset", 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j + 2 < d; ++j) atoms[i * d + j] = spread * normal(rng);
        atoms[i * d + d - 2] = offset;
        atoms[i * d + d - 1] = offset;
      }
      break;
    }
    case SyntheticKind::cluster_mixture: {
      detail::ParamReader p(params, {"centers", "spread", "center_distance"});
      const double centers_raw = p.positive("centers", 2.0);
      if (centers_raw != std::floor(centers_raw) || centers_raw > dim) {
        throw InvalidParameter("centers", "must be an integer between 1 and dim");
      }
      const auto centers = static_cast<std::size_t>(centers_raw);
      const double spread = p.positive("spread", 0.1);
      const double center_distance = p.positive("center_distance", 1.0);
      labels.emplace(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % centers;
        for (std::size_t j = 0; j < d; ++j) atoms[i * d + j] = spread * normal(rng);
        atoms[i * d + c] += center_distance;
        (*labels)[i] = std::to_string(c);
      }
      break;
    }
  }

  std::string source = "synthetic:" + to_string(kind) + " dim=" + std::to_string(dim) + " n=" + std::to_string(n) +
                       " seed=" + std::to_string(seed);
  for (const auto& [k, v] : params) source += " " + k + "=" + io::format_double(v);
  return EmpiricalPrior(dim, std::move(atoms), std::move(labels), std::move(source));
}

// ---------------------------------------------------------------------------
// Images

/// Square 2^k x 2^k pixel grid, row-major. Pixel values are unconstrained reals.
class ImageGrid {
 public:
  ImageGrid(int resolution_log2, std::vector<double> pixels)
      : k_(resolution_log2), pixels_(std::move(pixels)) {
    if (k_ < 0 || k_ > 15) throw InvalidParameter("resolution_log2", "must be in [0, 15]");
    if (pixels_.size() != side() * side()) {
      throw DimensionMismatch("ImageGrid: " + std::to_string(pixels_.size()) + " pixels for side " +
                              std::to_string(side()));
    }
  }

  /// Samples f(u, v) at pixel centres, u indexing rows, on (0,1]^2.
  template <typename F>
  static ImageGrid sample(int resolution_log2, F&& f) {
    const std::size_t side = std::size_t{1} << resolution_log2;
    std::vector<double> px(side * side);
    for (std::size_t i = 0; i < side; ++i) {
      for (std::size_t j = 0; j < side; ++j) {
        px[i * side + j] = f((i + 0.5) / static_cast<double>(side), (j + 0.5) / static_cast<double>(side));
      }
    }
    return ImageGrid(resolution_log2, std::move(px));
  }

  int resolution_log2() const noexcept { return k_; }
  std::size_t side() const noexcept { return std::size_t{1} << k_; }
  std::size_t dim() const noexcept { return pixels_.size(); }
  double at(std::size_t row, std::size_t col) const { return pixels_[row * side() + col]; }
  const std::vector<double>& pixels() const noexcept { return pixels_; }

  /// L^2((0,1]^2) norm of the piecewise-constant image: sqrt(mean of squares).
  double l2_norm() const { return std::sqrt(vec::norm_sq(pixels_) / static_cast<double>(pixels_.size())); }

 private:
  int k_;
  std::vector<double> pixels_;
};

/// Block-mean discretisation Phi_d onto resolution 2^target_k.
///
/// Implemented as repeated 2x2 averaging so that coarsening in one step or
/// through any intermediate resolution performs identical floating-point
/// operations; the tower property then holds bitwise.
inline ImageGrid discretize(const ImageGrid& fine, int target_k) {
  if (target_k < 0 || target_k > fine.resolution_log2()) {
    throw DimensionMismatch("discretize: target resolution 2^" + std::to_string(target_k) +
                            " is finer than the input 2^" + std::to_string(fine.resolution_log2()));
  }
  std::vector<double> cur = fine.pixels();
  std::size_t side = fine.side();
  for (int k = fine.resolution_log2(); k > target_k; --k) {
    const std::size_t half = side / 2;
    std::vector<double> next(half * half);
    for (std::size_t i = 0; i < half; ++i) {
      for (std::size_t j = 0; j < half; ++j) {
        const double a = cur[(2 * i) * side + 2 * j];
        const double b = cur[(2 * i) * side + 2 * j + 1];
        const double c = cur[(2 * i + 1) * side + 2 * j];
        const double e = cur[(2 * i + 1) * side + 2 * j + 1];
        next[i * half + j] = 0.25 * ((a + b) + (c + e));
      }
    }
    cur = std::move(next);
    side = half;
  }
  return ImageGrid(target_k, std::move(cur));
}

/// Flattens images into a prior; all images must share one resolution.
inline EmpiricalPrior prior_from_images(const std::vector<ImageGrid>& images,
                                        std::optional<std::vector<std::string>> labels, std::string source) {
  if (images.empty()) throw InvalidParameter("images", "need at least one image");
  const std::size_t d = images.front().dim();
  std::vector<double> atoms;
  atoms.reserve(images.size() * d);
  for (const auto& im : images) {
    if (im.dim() != d) throw DimensionMismatch("prior_from_images: mixed resolutions");
    atoms.insert(atoms.end(), im.pixels().begin(), im.pixels().end());
  }
  return EmpiricalPrior(static_cast<int>(d), std::move(atoms), std::move(labels), std::move(source));
}

/// Two-class digit-like images. Both classes share the left half (the left
/// arc of a ring); class "0" closes the ring on the right, class "1" has a
/// vertical stroke there instead. Centre, radius and stroke position are
/// jittered per image. Images alternate between the classes.
inline std::vector<ImageGrid> synthetic_digit_images(int resolution_log2, std::size_t count, std::uint64_t seed,
                                                     std::vector<std::string>* labels = nullptr) {
  if (count < 1) throw InvalidParameter("n", "must be >= 1");
  Rng rng = make_stream(seed, streams::prior_generation + 1);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double width = 0.09;
  std::vector<ImageGrid> out;
  out.reserve(count);
  if (labels) labels->clear();
  for (std::size_t i = 0; i < count; ++i) {
    const int cls = static_cast<int>(i % 2);
    const double cu = 0.5 + 0.04 * jitter(rng);
    const double cv = 0.5 + 0.04 * jitter(rng);
    const double radius = 0.3 + 0.04 * jitter(rng);
    const double stroke = 0.68 + 0.05 * jitter(rng);
    out.push_back(ImageGrid::sample(resolution_log2, [&](double u, double v) {
      double dist;
      if (v < 0.5 || cls == 0) {
        const double ring = std::hypot(u - cu, v - cv) - radius;
        dist = std::abs(ring);
        if (v >= 0.5 && cls == 1) dist = std::abs(v - stroke);
      } else {
        dist = std::abs(v - stroke) + std::max(0.0, std::abs(u - cu) - radius);
      }
      return std::exp(-0.5 * dist * dist / (width * width));
    }));
    if (labels) labels->push_back(std::to_string(cls));
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX ingestion

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline std::size_t next_pow2(std::size_t v) {
  std::size_t p = 1;
  while (p < v) p <<= 1;
  return p;
}

}  // namespace detail

/// Parses an IDX image file (magic 0x00000803, unsigned bytes, 3 dims).
///
/// Pixels are mapped to [0,1] by dividing by 255. Images whose sides are not
/// a common power of two are zero-padded symmetrically (MNIST 28x28 -> 32x32).
inline std::vector<ImageGrid> parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) {
    throw FormatError(FormatErrorKind::truncated_file, bytes.size(),
                      "truncated IDX header: expected 4 magic bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes[0] != 0 || bytes[1] != 0) {
    throw FormatError(FormatErrorKind::malformed_magic, 0, "malformed IDX magic: first two bytes must be zero");
  }
  if (bytes[2] != 0x08) {
    throw FormatError(FormatErrorKind::unsupported_type, 2,
                      "unsupported IDX element type " + std::to_string(bytes[2]) + " (only 8 = unsigned byte)");
  }
  if (bytes[3] != 3) {
    throw FormatError(FormatErrorKind::unsupported_type, 3,
                      "unsupported IDX rank " + std::to_string(bytes[3]) + " (image files have 3 dimensions)");
  }
  if (bytes.size() < 16) {
    throw FormatError(FormatErrorKind::truncated_file, bytes.size(),
                      "truncated IDX header: expected 16 bytes, found " + std::to_string(bytes.size()));
  }
  const std::size_t count = detail::read_be32(bytes, 4);
  const std::size_t rows = detail::read_be32(bytes, 8);
  const std::size_t cols = detail::read_be32(bytes, 12);
  if (rows == 0 || cols == 0) throw FormatError(FormatErrorKind::corrupt_header, 8, "IDX image with zero extent");
  const std::size_t per_image = rows * cols;  // each factor < 2^32
  if (count > (bytes.size() - 16) / per_image) {
    const auto expected = static_cast<unsigned long long>(count) * per_image + 16;  // display only
    throw FormatError(FormatErrorKind::truncated_file, bytes.size(),
                      "truncated IDX payload: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()));
  }
  const std::size_t expected = 16 + count * per_image;
  if (bytes.size() < expected) {
    throw FormatError(FormatErrorKind::truncated_file, bytes.size(),
                      "truncated IDX payload: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()));
  }

  const std::size_t side = detail::next_pow2(std::max(rows, cols));
  int k = 0;
  while ((std::size_t{1} << k) < side) ++k;
  const std::size_t top = (side - rows) / 2;
  const std::size_t left = (side - cols) / 2;

  std::vector<ImageGrid> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> px(side * side, 0.0);
    const std::uint8_t* src = bytes.data() + 16 + n * rows * cols;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) px[(top + i) * side + left + j] = src[i * cols + j] / 255.0;
    }
    out.emplace_back(k, std::move(px));
  }
  return out;
}

inline std::vector<ImageGrid> load_idx(const std::string& path) { return parse_idx_images(io::read_file(path)); }

/// IDX label file (magic 0x00000801); returns one byte per item.
inline std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 8) throw FormatError(FormatErrorKind::truncated_file, bytes.size(), "truncated IDX label header");
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError(FormatErrorKind::malformed_magic, 0, "malformed IDX magic");
  if (bytes[2] != 0x08 || bytes[3] != 1) {
    throw FormatError(FormatErrorKind::unsupported_type, 2, "not an unsigned-byte IDX label file");
  }
  const std::size_t count = detail::read_be32(bytes, 4);
  if (bytes.size() < 8 + count) {
    throw FormatError(FormatErrorKind::truncated_file, bytes.size(),
                      "truncated IDX labels: expected " + std::to_string(8 + count) + " bytes, found " +
                          std::to_string(bytes.size()));
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

// ---------------------------------------------------------------------------
// PDNZ binary format
//
//   "PDNZ" | u32 version=1 | u32 dim | u64 n | n*dim f64 atoms
//   | u8 has_labels | [n x (u32 len, bytes)] | u32 len, source bytes
//
// All integers and reals little-endian.

inline constexpr std::uint32_t kPriorFormatVersion = 1;

inline std::vector<std::uint8_t> encode_prior(const EmpiricalPrior& prior) {
  io::ByteWriter w;
  w.raw("PDNZ");
  w.u32(kPriorFormatVersion);
  w.u32(static_cast<std::uint32_t>(prior.dim()));
  w.u64(prior.size());
  for (double v : prior.atom_data()) w.f64(v);
  w.u8(prior.labels() ? 1 : 0);
  if (prior.labels()) {
    for (const auto& l : *prior.labels()) w.str(l);
  }
  w.str(prior.source());
  return w.bytes();
}

inline EmpiricalPrior decode_prior(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20) {
    throw FormatError(FormatErrorKind::corrupt_header, 0,
                      "corrupt prior header: " + std::to_string(bytes.size()) + " bytes is shorter than the header");
  }
  io::ByteReader r(bytes);
  if (r.raw(4) != "PDNZ") throw FormatError(FormatErrorKind::corrupt_header, 0, "corrupt prior header: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kPriorFormatVersion) {
    throw FormatError(FormatErrorKind::version_mismatch, 4,
                      "prior format version " + std::to_string(version) + " not supported (reader is v1)");
  }
  const std::uint32_t dim = r.u32();
  const std::uint64_t n = r.u64();
  if (dim < 3 || n == 0) throw FormatError(FormatErrorKind::corrupt_header, 8, "corrupt prior header: bad dim or n");
  if (n > r.remaining() / (8u * dim)) {
    throw FormatError(FormatErrorKind::truncated_file, r.offset(),
                      "truncated prior payload: header declares " + std::to_string(n) + " atoms of dimension " +
                          std::to_string(dim) + ", only " + std::to_string(r.remaining()) + " bytes remain");
  }
  std::vector<double> atoms(static_cast<std::size_t>(n * dim));
  for (auto& v : atoms) v = r.f64();
  std::optional<std::vector<std::string>> labels;
  if (r.u8() != 0) {
    labels.emplace(static_cast<std::size_t>(n));
    for (auto& l : *labels) l = r.str();
  }
  std::string source = r.str();
  if (!r.at_end()) throw FormatError(FormatErrorKind::corrupt_header, r.offset(), "trailing bytes after prior");
  return EmpiricalPrior(static_cast<int>(dim), std::move(atoms), std::move(labels), std::move(source));
}

inline void save_prior(const EmpiricalPrior& prior, const std::string& path) {
  io::write_file(path, encode_prior(prior));
}

inline EmpiricalPrior load_prior(const std::string& path) { return decode_prior(io::read_file(path)); }

/// CSV export: first row "dim,n" holding the two values, then one atom per row.
inline void export_prior_csv(const EmpiricalPrior& prior, std::ostream& out) {
  out << prior.dim() << ',' << prior.size() << "\r\n";
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const auto a = prior.atom(i);
    for (std::size_t j = 0; j < a.size(); ++j) out << (j ? "," : "") << io::format_double(a[j]);
    out << "\r\n";
  }
}

}  // namespace polar_denoise
