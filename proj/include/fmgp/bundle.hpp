#pragma once

#include "fmgp/canonical_json.hpp"
#include "fmgp/common.hpp"
#include "fmgp/exact_gp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fmgp::io {

/// The sole interface to the pre-trained model: features, its outputs g,
/// targets, and optional high-level embeddings.
struct PredictionBundle {
  Mode mode = Mode::Regression;
  Mat x;                    // N x D features
  Mat g;                    // N x 1 outputs or N x C logits
  Vec y;                    // regression targets
  std::vector<int> labels;  // classification targets in [0, C)
  Mat psi;                  // N x E embeddings, 0 x 0 when absent
  std::vector<int> split;   // optional 0=train 1=val 2=test tags
  std::uint64_t seed = 0;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
  Eigen::Index n_classes() const { return mode == Mode::Classification ? g.cols() : 0; }
  bool has_psi() const { return psi.rows() > 0; }
  bool has_split() const { return !split.empty(); }

  /// Throws ShapeError when row counts disagree or labels are out of range.
  void validate() const;
};

/// Self-describing single-file binary container: magic line, canonical JSON
/// manifest line, then 8-byte aligned little-endian payloads. Readers reject
/// trailing bytes and truncated payloads.
inline constexpr char kContainerMagic[] = "FMGPB1\n";
inline constexpr int kFormatVersion = 1;

struct NamedArrayF64 {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct NamedArrayI64 {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<std::int64_t> data;
};

/// Generic container payload: arrays plus a parsed manifest "meta" object.
class Container {
 public:
  void add(const std::string& name, const Mat& m);
  void add(const std::string& name, const Vec& v);
  void add_i64(const std::string& name, const std::vector<int>& v);
  void set_meta(const JsonObject& meta) { meta_json_ = meta.str(); }

  void write(const std::string& path) const;
  static Container read(const std::string& path);

  bool has(const std::string& name) const;
  Mat f64(const std::string& name) const;          // 2-D arrays
  Vec f64_vec(const std::string& name) const;      // 1-D arrays
  std::vector<int> i64(const std::string& name) const;

  /// Raw manifest meta text (canonical JSON) and typed accessors.
  const std::string& meta_json() const { return meta_json_; }
  std::string meta_string(const std::string& key) const;
  double meta_double(const std::string& key) const;
  std::int64_t meta_int(const std::string& key) const;
  bool meta_has(const std::string& key) const;

 private:
  std::vector<NamedArrayF64> f64_;
  std::vector<NamedArrayI64> i64_;
  std::string meta_json_ = "{}";
};

PredictionBundle read_bundle(const std::string& path);
void write_bundle(const PredictionBundle& bundle, const std::string& path);

/// Desk-scale text path; header-tagged columns, 17 significant digits.
void write_bundle_csv(const PredictionBundle& bundle, const std::string& path);
PredictionBundle read_bundle_csv(const std::string& path);

/// FNV-1a digest of an entire file, as fixed-width hex.
std::string file_digest_hex(const std::string& path);

/// Three-cluster 1-D regression data with a smooth trend and Gaussian noise.
/// g comes from an exact-GP mean fit on the training points, standing in for
/// a pre-trained point predictor. Deterministic under seed.
PredictionBundle synth_clusters(std::uint64_t seed, int n_per_cluster);

/// Same generator, but with a held-out sample from the same process and g
/// evaluated on both sets by the one predictor fit on the training points.
struct SynthSplit {
  PredictionBundle train;
  PredictionBundle test;
  exactgp::ExactGPState g_model;  // the point predictor behind g
};
SynthSplit synth_clusters_split(std::uint64_t seed, int n_train_per_cluster, int n_test_per_cluster);

/// Generator geometry, exposed so tests can locate the inter-cluster gaps.
struct SynthGeometry {
  static constexpr double ranges[3][2] = {{-2.2, -1.5}, {-0.3, 0.3}, {1.5, 2.2}};
  static constexpr double noise_sd = 0.1;
  // The short-wavelength component is learnable inside a cluster but cannot
  // be bridged across a gap, so any point predictor errs between clusters.
  static double trend(double x) { return std::sin(2.2 * x) + 0.4 * x + 0.8 * std::sin(8.3 * x); }
  static double gap_midpoint(int gap) { return 0.5 * (ranges[gap][1] + ranges[gap + 1][0]); }
};

}  // namespace fmgp::io
