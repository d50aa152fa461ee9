#include "fmgp/bundle.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fmgp::io {

std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

std::string json_number(double v) { return format_double(v); }

std::string json_number(std::int64_t v) { return std::to_string(v); }

std::string json_string(const std::string& s) { return "\"" + json_escape(s) + "\""; }

std::string JsonArray::str() const {
  std::string out = "[";
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (i) out += ",";
    out += items_[i];
  }
  return out + "]";
}

std::string JsonObject::str() const {
  auto sorted = fields_;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out = "{";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) out += ",";
    out += json_string(sorted[i].first) + ":" + sorted[i].second;
  }
  return out + "}";
}

void PredictionBundle::validate() const {
  const Eigen::Index rows = x.rows();
  if (rows == 0) throw ShapeError("bundle: empty feature matrix");
  if (g.rows() != rows) throw ShapeError("bundle: g row count disagrees with X");
  if (mode == Mode::Regression) {
    if (g.cols() != 1) throw ShapeError("bundle: regression g must have one column");
    if (y.size() != rows) throw ShapeError("bundle: y row count disagrees with X");
  } else {
    if (g.cols() < 2) throw ShapeError("bundle: classification needs at least two logit columns");
    if (static_cast<Eigen::Index>(labels.size()) != rows) throw ShapeError("bundle: label count disagrees with X");
    for (int c : labels)
      if (c < 0 || c >= g.cols()) throw ShapeError("bundle: label out of range");
  }
  if (psi.rows() > 0 && psi.rows() != rows) throw ShapeError("bundle: psi row count disagrees with X");
  if (!split.empty() && static_cast<Eigen::Index>(split.size()) != rows)
    throw ShapeError("bundle: split tag count disagrees with X");
}

namespace {

void encode_le64(std::uint64_t v, char* out) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint64_t decode_le64(const char* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void append_f64_payload(std::string& out, const std::vector<double>& data) {
  char buf[8];
  for (double d : data) {
    encode_le64(std::bit_cast<std::uint64_t>(d), buf);
    out.append(buf, 8);
  }
}

void append_i64_payload(std::string& out, const std::vector<std::int64_t>& data) {
  char buf[8];
  for (std::int64_t d : data) {
    encode_le64(std::bit_cast<std::uint64_t>(d), buf);
    out.append(buf, 8);
  }
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto s : shape) {
    if (s < 0) throw FormatError("container: negative shape entry");
    n *= s;
  }
  return n;
}

}  // namespace

void Container::add(const std::string& name, const Mat& m) {
  NamedArrayF64 a;
  a.name = name;
  a.shape = {m.rows(), m.cols()};
  a.data.assign(m.data(), m.data() + m.size());  // row-major payload
  f64_.push_back(std::move(a));
}

void Container::add(const std::string& name, const Vec& v) {
  NamedArrayF64 a;
  a.name = name;
  a.shape = {v.size()};
  a.data.assign(v.data(), v.data() + v.size());
  f64_.push_back(std::move(a));
}

void Container::add_i64(const std::string& name, const std::vector<int>& v) {
  NamedArrayI64 a;
  a.name = name;
  a.shape = {static_cast<std::int64_t>(v.size())};
  a.data.assign(v.begin(), v.end());
  i64_.push_back(std::move(a));
}

void Container::write(const std::string& path) const {
  struct Entry {
    std::string name;
    std::string dtype;
    const std::vector<std::int64_t>* shape;
    std::int64_t bytes;
    const NamedArrayF64* f = nullptr;
    const NamedArrayI64* i = nullptr;
  };
  std::vector<Entry> entries;
  for (const auto& a : f64_)
    entries.push_back({a.name, "f64", &a.shape, static_cast<std::int64_t>(a.data.size() * 8), &a, nullptr});
  for (const auto& a : i64_)
    entries.push_back({a.name, "i64", &a.shape, static_cast<std::int64_t>(a.data.size() * 8), nullptr, &a});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.name < b.name; });

  // Tight packing; every payload is a multiple of 8 bytes, so alignment holds.
  JsonArray arr;
  std::int64_t offset = 0;
  for (auto& e : entries) {
    JsonObject o;
    o.put("dtype", e.dtype);
    o.put("name", e.name);
    o.put("offset", offset);
    JsonArray shape;
    for (auto s : *e.shape) shape.push(s);
    o.put("shape", shape);
    arr.push_raw(o.str());
    offset += e.bytes;
  }
  JsonObject manifest;
  manifest.put_raw("arrays", arr.str());
  manifest.put_raw("meta", meta_json_);
  manifest.put("version", kFormatVersion);

  std::string out;
  out += kContainerMagic;
  out += manifest.str();
  out += '\n';
  while (out.size() % 8 != 0) out += '\0';
  for (const auto& e : entries) {
    if (e.f) append_f64_payload(out, e.f->data);
    else append_i64_payload(out, e.i->data);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("container: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("container: write failed for " + path);
}

Container Container::read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("container: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  const std::size_t magic_len = std::strlen(kContainerMagic);
  if (bytes.size() < magic_len || bytes.compare(0, magic_len, kContainerMagic) != 0)
    throw FormatError("container: bad magic");
  const std::size_t manifest_end = bytes.find('\n', magic_len);
  if (manifest_end == std::string::npos) throw FormatError("container: unterminated manifest");
  const std::string manifest_text = bytes.substr(magic_len, manifest_end - magic_len);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: manifest parse error: ") + e.what());
  }
  if (!manifest.contains("version") || manifest["version"].get<int>() != kFormatVersion)
    throw FormatError("container: unsupported format version");

  std::size_t payload_base = manifest_end + 1;
  while (payload_base % 8 != 0) {
    if (payload_base >= bytes.size() || bytes[payload_base] != '\0')
      throw FormatError("container: bad manifest padding");
    ++payload_base;
  }

  Container c;
  c.meta_json_ = manifest.contains("meta") ? manifest["meta"].dump() : "{}";

  std::int64_t expected_offset = 0;
  for (const auto& item : manifest["arrays"]) {
    const std::string name = item.at("name").get<std::string>();
    const std::string dtype = item.at("dtype").get<std::string>();
    const std::int64_t offset = item.at("offset").get<std::int64_t>();
    std::vector<std::int64_t> shape = item.at("shape").get<std::vector<std::int64_t>>();
    const std::int64_t count = element_count(shape);
    if (offset != expected_offset) throw FormatError("container: arrays are not tightly packed");
    const std::size_t begin = payload_base + static_cast<std::size_t>(offset);
    const std::size_t nbytes = static_cast<std::size_t>(count) * 8;
    if (begin + nbytes > bytes.size()) throw FormatError("container: truncated payload");
    if (dtype == "f64") {
      NamedArrayF64 a;
      a.name = name;
      a.shape = std::move(shape);
      a.data.resize(static_cast<std::size_t>(count));
      for (std::int64_t k = 0; k < count; ++k)
        a.data[static_cast<std::size_t>(k)] =
            std::bit_cast<double>(decode_le64(bytes.data() + begin + static_cast<std::size_t>(k) * 8));
      c.f64_.push_back(std::move(a));
    } else if (dtype == "i64") {
      NamedArrayI64 a;
      a.name = name;
      a.shape = std::move(shape);
      a.data.resize(static_cast<std::size_t>(count));
      for (std::int64_t k = 0; k < count; ++k)
        a.data[static_cast<std::size_t>(k)] =
            std::bit_cast<std::int64_t>(decode_le64(bytes.data() + begin + static_cast<std::size_t>(k) * 8));
      c.i64_.push_back(std::move(a));
    } else {
      throw FormatError("container: unknown dtype " + dtype);
    }
    expected_offset += count * 8;
  }
  if (payload_base + static_cast<std::size_t>(expected_offset) != bytes.size())
    throw FormatError("container: trailing bytes after payload");
  return c;
}

bool Container::has(const std::string& name) const {
  for (const auto& a : f64_)
    if (a.name == name) return true;
  for (const auto& a : i64_)
    if (a.name == name) return true;
  return false;
}

Mat Container::f64(const std::string& name) const {
  for (const auto& a : f64_) {
    if (a.name != name) continue;
    if (a.shape.size() == 2) {
      Mat m(a.shape[0], a.shape[1]);
      std::copy(a.data.begin(), a.data.end(), m.data());
      return m;
    }
    if (a.shape.size() == 1) {
      Mat m(a.shape[0], 1);
      std::copy(a.data.begin(), a.data.end(), m.data());
      return m;
    }
    throw FormatError("container: array " + name + " is not 1-D or 2-D");
  }
  throw FormatError("container: missing array " + name);
}

Vec Container::f64_vec(const std::string& name) const {
  Mat m = f64(name);
  if (m.cols() != 1) throw FormatError("container: array " + name + " is not a vector");
  return m.col(0);
}

std::vector<int> Container::i64(const std::string& name) const {
  for (const auto& a : i64_) {
    if (a.name != name) continue;
    std::vector<int> out(a.data.size());
    for (std::size_t k = 0; k < a.data.size(); ++k) out[k] = static_cast<int>(a.data[k]);
    return out;
  }
  throw FormatError("container: missing array " + name);
}

namespace {

nlohmann::json parsed_meta(const std::string& meta_json) {
  return nlohmann::json::parse(meta_json);
}

}  // namespace

std::string Container::meta_string(const std::string& key) const {
  auto j = parsed_meta(meta_json_);
  if (!j.contains(key)) throw FormatError("container: missing meta key " + key);
  return j[key].get<std::string>();
}

double Container::meta_double(const std::string& key) const {
  auto j = parsed_meta(meta_json_);
  if (!j.contains(key)) throw FormatError("container: missing meta key " + key);
  return j[key].get<double>();
}

std::int64_t Container::meta_int(const std::string& key) const {
  auto j = parsed_meta(meta_json_);
  if (!j.contains(key)) throw FormatError("container: missing meta key " + key);
  return j[key].get<std::int64_t>();
}

bool Container::meta_has(const std::string& key) const { return parsed_meta(meta_json_).contains(key); }

PredictionBundle read_bundle(const std::string& path) {
  Container c = Container::read(path);
  PredictionBundle b;
  const std::string mode = c.meta_string("mode");
  if (c.meta_string("kind") != "bundle") throw FormatError("read_bundle: not a bundle file");
  b.mode = mode == "regression" ? Mode::Regression : Mode::Classification;
  b.seed = static_cast<std::uint64_t>(c.meta_int("seed"));
  b.x = c.f64("X");
  b.g = c.f64("g");
  if (b.mode == Mode::Regression) {
    b.y = c.f64_vec("y");
  } else {
    b.labels = c.i64("labels");
  }
  if (c.has("psi")) b.psi = c.f64("psi");
  if (c.has("split")) b.split = c.i64("split");
  b.validate();
  return b;
}

void write_bundle(const PredictionBundle& bundle, const std::string& path) {
  bundle.validate();
  Container c;
  c.add("X", bundle.x);
  if (bundle.mode == Mode::Regression) {
    c.add("g", bundle.g);
    c.add("y", bundle.y);
  } else {
    c.add("g", bundle.g);
    c.add_i64("labels", bundle.labels);
  }
  if (bundle.has_psi()) c.add("psi", bundle.psi);
  if (bundle.has_split()) c.add_i64("split", bundle.split);
  JsonObject meta;
  meta.put("kind", "bundle");
  meta.put("mode", mode_name(bundle.mode));
  meta.put("seed", static_cast<std::int64_t>(bundle.seed));
  c.set_meta(meta);
  c.write(path);
}

void write_bundle_csv(const PredictionBundle& bundle, const std::string& path) {
  bundle.validate();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("csv: cannot open " + path + " for writing");
  f << "# fmgp-bundle-csv v" << kFormatVersion << " mode=" << mode_name(bundle.mode)
    << " seed=" << bundle.seed << "\n";
  const Eigen::Index d = bundle.dim();
  const Eigen::Index e = bundle.psi.cols();
  for (Eigen::Index j = 0; j < d; ++j) f << (j ? "," : "") << "x" << j;
  if (bundle.mode == Mode::Regression) {
    f << ",g,y";
  } else {
    for (Eigen::Index cc = 0; cc < bundle.g.cols(); ++cc) f << ",g" << cc;
    f << ",y";
  }
  if (bundle.has_psi())
    for (Eigen::Index j = 0; j < e; ++j) f << ",psi" << j;
  if (bundle.has_split()) f << ",split";
  f << "\n";
  for (Eigen::Index i = 0; i < bundle.n(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) f << (j ? "," : "") << format_double(bundle.x(i, j));
    for (Eigen::Index cc = 0; cc < bundle.g.cols(); ++cc) f << "," << format_double(bundle.g(i, cc));
    if (bundle.mode == Mode::Regression) {
      f << "," << format_double(bundle.y[i]);
    } else {
      f << "," << bundle.labels[static_cast<std::size_t>(i)];
    }
    if (bundle.has_psi())
      for (Eigen::Index j = 0; j < e; ++j) f << "," << format_double(bundle.psi(i, j));
    if (bundle.has_split()) f << "," << bundle.split[static_cast<std::size_t>(i)];
    f << "\n";
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

PredictionBundle read_bundle_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("csv: cannot open " + path);
  std::string line;
  std::uint64_t seed = 0;
  std::string mode_str;
  // Optional comment line with mode/seed tags.
  std::streampos after_comment = f.tellg();
  if (std::getline(f, line) && !line.empty() && line[0] == '#') {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
      if (tok.rfind("mode=", 0) == 0) mode_str = tok.substr(5);
      if (tok.rfind("seed=", 0) == 0) seed = std::stoull(tok.substr(5));
    }
  } else {
    f.seekg(after_comment);
  }
  if (!std::getline(f, line)) throw FormatError("csv: missing header");
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<int> x_cols, g_cols, psi_cols;
  int y_col = -1, split_col = -1;
  for (std::size_t k = 0; k < header.size(); ++k) {
    const std::string& h = header[k];
    if (h.rfind("x", 0) == 0 && h.size() > 1 && std::isdigit(static_cast<unsigned char>(h[1])))
      x_cols.push_back(static_cast<int>(k));
    else if (h == "g" || (h.rfind("g", 0) == 0 && h.size() > 1 && std::isdigit(static_cast<unsigned char>(h[1]))))
      g_cols.push_back(static_cast<int>(k));
    else if (h == "y")
      y_col = static_cast<int>(k);
    else if (h.rfind("psi", 0) == 0)
      psi_cols.push_back(static_cast<int>(k));
    else if (h == "split")
      split_col = static_cast<int>(k);
    else
      throw FormatError("csv: unknown column tag " + h);
  }
  if (x_cols.empty() || g_cols.empty() || y_col < 0) throw FormatError("csv: required columns missing");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
    if (rows.back().size() != header.size()) throw FormatError("csv: ragged row");
  }
  if (rows.empty()) throw FormatError("csv: no data rows");

  PredictionBundle b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.mode = g_cols.size() > 1 ? Mode::Classification : Mode::Regression;
  if (!mode_str.empty() && mode_str != mode_name(b.mode)) throw FormatError("csv: mode tag disagrees with columns");
  b.seed = seed;
  b.x.resize(n, static_cast<Eigen::Index>(x_cols.size()));
  b.g.resize(n, static_cast<Eigen::Index>(g_cols.size()));
  if (b.mode == Mode::Regression) b.y.resize(n);
  if (!psi_cols.empty()) b.psi.resize(n, static_cast<Eigen::Index>(psi_cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < x_cols.size(); ++j)
      b.x(i, static_cast<Eigen::Index>(j)) = std::stod(r[static_cast<std::size_t>(x_cols[j])]);
    for (std::size_t j = 0; j < g_cols.size(); ++j)
      b.g(i, static_cast<Eigen::Index>(j)) = std::stod(r[static_cast<std::size_t>(g_cols[j])]);
    if (b.mode == Mode::Regression) {
      b.y[i] = std::stod(r[static_cast<std::size_t>(y_col)]);
    } else {
      b.labels.push_back(std::stoi(r[static_cast<std::size_t>(y_col)]));
    }
    for (std::size_t j = 0; j < psi_cols.size(); ++j)
      b.psi(i, static_cast<Eigen::Index>(j)) = std::stod(r[static_cast<std::size_t>(psi_cols[j])]);
    if (split_col >= 0) b.split.push_back(std::stoi(r[static_cast<std::size_t>(split_col)]));
  }
  b.validate();
  return b;
}

std::string file_digest_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("digest: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

namespace {

Mat draw_cluster_inputs(Rng& rng, int n_per_cluster) {
  Mat x(3 * n_per_cluster, 1);
  Eigen::Index r = 0;
  for (const auto& range : SynthGeometry::ranges) {
    for (int i = 0; i < n_per_cluster; ++i)
      x(r++, 0) = range[0] + (range[1] - range[0]) * rng.uniform();
  }
  return x;
}

Vec targets_for(Rng& rng, const Mat& x) {
  Vec y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    y[i] = SynthGeometry::trend(x(i, 0)) + SynthGeometry::noise_sd * rng.normal();
  return y;
}

}  // namespace

SynthSplit synth_clusters_split(std::uint64_t seed, int n_train_per_cluster, int n_test_per_cluster) {
  if (n_train_per_cluster <= 0) throw EmptyInput("synth_clusters: n_per_cluster must be positive");
  Rng rng(seed * 0x9e3779b9u + 17u);
  SynthSplit out;
  out.train.mode = Mode::Regression;
  out.train.seed = seed;
  out.train.x = draw_cluster_inputs(rng, n_train_per_cluster);
  out.train.y = targets_for(rng, out.train.x);

  kernels::RbfParams init = kernels::RbfParams::unit(1);
  init.log_len[0] = std::log(0.5);
  exactgp::HyperFitConfig hcfg;
  hcfg.steps = 250;
  hcfg.lr = 0.05;
  // Hyper-parameter search runs on a strided subsample when the training set
  // is large; the final factorization always uses the full data. The mean fit
  // then uses a shrunken noise floor so g behaves like a point predictor
  // trained to low training error rather than a regularized posterior mean.
  constexpr double kOverfitShrink = 1.0 / 8.0;
  const Eigen::Index n_train = out.train.n();
  constexpr Eigen::Index kHyperCap = 300;
  kernels::RbfParams g_kernel;
  double g_sigma2 = 0.0;
  if (n_train > kHyperCap) {
    const Eigen::Index stride = (n_train + kHyperCap - 1) / kHyperCap;
    const Eigen::Index n_sub = (n_train + stride - 1) / stride;
    Mat xs(n_sub, 1);
    Vec ys(n_sub);
    for (Eigen::Index i = 0, r = 0; i < n_train; i += stride, ++r) {
      xs(r, 0) = out.train.x(i, 0);
      ys[r] = out.train.y[i];
    }
    auto sub = exactgp::fit_exact_hypers(xs, ys, init, 0.01, hcfg);
    g_kernel = sub.kernel;
    g_sigma2 = sub.sigma2;
  } else {
    auto full = exactgp::fit_exact_hypers(out.train.x, out.train.y, init, 0.01, hcfg);
    g_kernel = full.kernel;
    g_sigma2 = full.sigma2;
  }
  out.g_model = exactgp::fit_exact(out.train.x, out.train.y, g_kernel, g_sigma2 * kOverfitShrink);
  const auto& predictor = out.g_model;

  out.train.g.resize(out.train.n(), 1);
  for (Eigen::Index i = 0; i < out.train.n(); ++i)
    out.train.g(i, 0) = exactgp::predict_exact(predictor, out.train.x.row(i).transpose()).mean;

  if (n_test_per_cluster > 0) {
    // Held-out inputs cover the whole domain span, gaps included; the trend
    // and noise model are defined everywhere, the training clusters are not
    // where deployment queries live.
    out.test.mode = Mode::Regression;
    out.test.seed = seed;
    const double lo = SynthGeometry::ranges[0][0];
    const double hi = SynthGeometry::ranges[2][1];
    out.test.x.resize(3 * n_test_per_cluster, 1);
    for (Eigen::Index i = 0; i < out.test.x.rows(); ++i) out.test.x(i, 0) = lo + (hi - lo) * rng.uniform();
    out.test.y = targets_for(rng, out.test.x);
    out.test.g.resize(out.test.n(), 1);
    for (Eigen::Index i = 0; i < out.test.n(); ++i)
      out.test.g(i, 0) = exactgp::predict_exact(predictor, out.test.x.row(i).transpose()).mean;
    out.test.validate();
  }
  out.train.validate();
  return out;
}

PredictionBundle synth_clusters(std::uint64_t seed, int n_per_cluster) {
  return synth_clusters_split(seed, n_per_cluster, 0).train;
}

}  // namespace fmgp::io
