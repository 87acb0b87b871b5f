// Copyright 2026 The robfeat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "robfeat/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "robfeat/hash.hpp"

namespace robfeat {

namespace {

constexpr std::uint32_t kFlagImageLike = 1u;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIo, "read error on " + path);
  return buf;
}

void write_file(const std::string& path, const std::vector<unsigned char>& buf) {
  // Write to a sibling temp file and rename so readers never see a partial file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorCode::kIo, "write error on " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorCode::kIo, "cannot rename to " + path);
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32le(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32be(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64le(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void raw(const std::string& s) { buf.insert(buf.end(), s.begin(), s.end()); }
  std::vector<unsigned char> buf;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::string what) : buf_(b), what_(std::move(what)) {}
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail(ErrorCode::kFormat, what_ + ": size mismatch (truncated file)");
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint32_t u32be() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | buf_[pos_ + i];
    pos_ += 4;
    return v;
  }
  double f64le() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

void LabeledDataset::push(std::span<const double> x, std::uint32_t label) {
  if (n == 0 && d == 0) d = x.size();
  require_same_dim(x.size(), d, "LabeledDataset::push");
  inputs.insert(inputs.end(), x.begin(), x.end());
  labels.push_back(label);
  ++n;
}

void LabeledDataset::validate() const {
  require(n >= 1, ErrorCode::kInvalidArgument, "dataset is empty");
  require(d >= 1, ErrorCode::kInvalidArgument, "dataset has zero input dimension");
  require(num_classes >= 1, ErrorCode::kInvalidArgument, "dataset has no classes");
  require_same_dim(inputs.size(), n * d, "dataset inputs");
  require_same_dim(labels.size(), n, "dataset labels");
  require_finite(inputs, "dataset inputs");
  for (auto l : labels) {
    require(l < num_classes, ErrorCode::kInvalidArgument, "dataset label out of range");
  }
  if (image_like) {
    for (double v : inputs) {
      require(v >= 0.0 && v <= 1.0, ErrorCode::kInvalidArgument,
              "image-like dataset has inputs outside [0,1]");
    }
  }
}

std::string LabeledDataset::content_hash() const {
  Fnv1a h;
  h.u64(n);
  h.u64(d);
  h.u64(num_classes);
  h.u64(image_like ? 1 : 0);
  h.f64s(inputs);
  h.bytes(labels.data(), labels.size() * sizeof(std::uint32_t));
  return h.hex();
}

LabeledDataset empty_like(const LabeledDataset& ds) {
  LabeledDataset out;
  out.d = ds.d;
  out.num_classes = ds.num_classes;
  out.image_like = ds.image_like;
  return out;
}

LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
  LabeledDataset out = empty_like(ds);
  out.inputs.reserve(idx.size() * ds.d);
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) {
    require(i < ds.n, ErrorCode::kInvalidArgument, "subset index out of range");
    out.push(ds.row(i), ds.labels[i]);
  }
  out.manifest = {{"source", ds.content_hash()}, {"op", "subset"}, {"count", idx.size()}};
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, std::size_t n_train,
                                                std::uint64_t seed) {
  require(n_train >= 1 && n_train < ds.n, ErrorCode::kInvalidArgument,
          "split: train size must leave both parts nonempty");
  std::vector<std::size_t> perm(ds.n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(seed, 0x73706c6974ULL);
  for (std::size_t i = ds.n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<std::size_t> a(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> b(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  auto tr = subset(ds, a);
  auto te = subset(ds, b);
  tr.manifest = {{"source", ds.content_hash()}, {"op", "split-train"}, {"seed", seed},
                 {"parent", ds.manifest}};
  te.manifest = {{"source", ds.content_hash()}, {"op", "split-test"}, {"seed", seed},
                 {"parent", ds.manifest}};
  return {std::move(tr), std::move(te)};
}

LabeledDataset select_classes(const LabeledDataset& ds, const std::vector<std::uint32_t>& classes) {
  require(!classes.empty(), ErrorCode::kInvalidArgument, "select_classes: no classes given");
  LabeledDataset out = empty_like(ds);
  out.num_classes = classes.size();
  for (std::size_t i = 0; i < ds.n; ++i) {
    auto it = std::find(classes.begin(), classes.end(), ds.labels[i]);
    if (it != classes.end()) out.push(ds.row(i), static_cast<std::uint32_t>(it - classes.begin()));
  }
  out.manifest = {{"source", ds.content_hash()}, {"op", "select-classes"}, {"classes", classes},
                  {"parent", ds.manifest}};
  return out;
}

std::vector<std::size_t> class_counts(const LabeledDataset& ds) {
  std::vector<std::size_t> c(ds.num_classes, 0);
  for (auto l : ds.labels) {
    if (l < c.size()) ++c[l];
  }
  return c;
}

std::pair<Vec, Vec> coordinate_range(const LabeledDataset& ds) {
  require(ds.n >= 1, ErrorCode::kInvalidArgument, "coordinate_range: empty dataset");
  Vec lo(ds.row(0).begin(), ds.row(0).end());
  Vec hi = lo;
  for (std::size_t i = 1; i < ds.n; ++i) {
    auto r = ds.row(i);
    for (std::size_t j = 0; j < ds.d; ++j) {
      lo[j] = std::min(lo[j], r[j]);
      hi[j] = std::max(hi[j], r[j]);
    }
  }
  return {lo, hi};
}

Json spec_to_json(const SyntheticSpec& spec) {
  Json j;
  j["kind"] = spec.kind == SyntheticKind::kTwoGaussian ? "two-gaussian" : "robustness-vs-accuracy";
  j["dim"] = spec.dim;
  j["n"] = spec.n;
  j["seed"] = spec.seed;
  if (spec.kind == SyntheticKind::kTwoGaussian) {
    j["mu_star"] = spec.mu_star;
    j["sigma_star"] = spec.sigma_star;
  } else {
    j["epsilon_design"] = spec.epsilon_design;
    j["nonrobust_dims"] = spec.nonrobust_dims;
    j["nonrobust_scale"] = spec.nonrobust_scale;
    j["nonrobust_noise"] = spec.nonrobust_noise;
  }
  return j;
}

LabeledDataset gen_two_gaussian(const SyntheticSpec& spec) {
  require(spec.kind == SyntheticKind::kTwoGaussian, ErrorCode::kInvalidArgument,
          "gen_two_gaussian: wrong spec kind");
  require(spec.n >= 1, ErrorCode::kInvalidArgument, "gen_two_gaussian: n must be >= 1");
  require(spec.mu_star.size() == spec.dim && spec.sigma_star.size() == spec.dim,
          ErrorCode::kInvalidArgument, "gen_two_gaussian: mu_star/sigma_star must have length dim");
  const DiagMat sigma(spec.sigma_star);
  LabeledDataset ds;
  ds.d = spec.dim;
  ds.num_classes = 2;
  ds.inputs.reserve(spec.n * spec.dim);
  const RngStream base(spec.seed, 0x67617573ULL);
  Vec neg = scaled(spec.mu_star, -1.0);
  for (std::size_t k = 0; k < spec.n; ++k) {
    RngStream rng = base.fork(k);
    const int y = rng.below(2) == 1 ? 1 : -1;
    const Vec x = sample_gaussian(rng, y > 0 ? spec.mu_star : neg, sigma);
    ds.push(x, class_label(y));
  }
  ds.manifest = {{"generator", spec_to_json(spec)}};
  return ds;
}

LabeledDataset gen_robustness_vs_accuracy(const SyntheticSpec& spec) {
  require(spec.kind == SyntheticKind::kRobustnessVsAccuracy, ErrorCode::kInvalidArgument,
          "gen_robustness_vs_accuracy: wrong spec kind");
  require(spec.n >= 1, ErrorCode::kInvalidArgument, "gen_robustness_vs_accuracy: n must be >= 1");
  require(spec.epsilon_design > 0.0, ErrorCode::kInvalidArgument,
          "gen_robustness_vs_accuracy: epsilon_design must be positive");
  require(spec.nonrobust_dims >= 1 && spec.nonrobust_noise >= 0.0, ErrorCode::kInvalidArgument,
          "gen_robustness_vs_accuracy: invalid non-robust block");
  require(spec.dim == 1 + spec.nonrobust_dims, ErrorCode::kInvalidArgument,
          "gen_robustness_vs_accuracy: dim must equal 1 + nonrobust_dims");
  // The robust coordinate's classes sit on [1,2] and [-2,-1]: gap 2.
  if (!(2.0 > 2.0 * spec.epsilon_design)) {
    fail(ErrorCode::kInvalidArgument,
         "gen_robustness_vs_accuracy: margin violation (class gap 2 must exceed 2*epsilon)");
  }
  const double scale =
      spec.nonrobust_scale < 0.0 ? spec.epsilon_design / 2.0 : spec.nonrobust_scale;
  LabeledDataset ds;
  ds.d = spec.dim;
  ds.num_classes = 2;
  ds.inputs.reserve(spec.n * spec.dim);
  const RngStream base(spec.seed, 0x72766163ULL);
  Vec x(spec.dim);
  for (std::size_t k = 0; k < spec.n; ++k) {
    RngStream rng = base.fork(k);
    const int y = rng.below(2) == 1 ? 1 : -1;
    x[0] = y * rng.uniform(1.0, 2.0);
    for (std::size_t j = 1; j < spec.dim; ++j) {
      x[j] = y * scale + (spec.nonrobust_noise > 0.0 ? spec.nonrobust_noise * rng.normal() : 0.0);
    }
    ds.push(x, class_label(y));
  }
  ds.manifest = {{"generator", spec_to_json(spec)}};
  return ds;
}

std::size_t IdxTensor::count() const {
  std::size_t c = 1;
  for (auto d : dims) c *= d;
  return c;
}

IdxTensor load_idx(const std::string& path) {
  const auto buf = read_file(path);
  Reader r(buf, "load_idx(" + path + ")");
  if (buf.size() < 4 || buf[0] != 0 || buf[1] != 0) {
    fail(ErrorCode::kFormat, "load_idx: bad magic in " + path);
  }
  r.u8();
  r.u8();
  IdxTensor t;
  t.type = r.u8();
  if (t.type != 0x08 && t.type != 0x0D) {
    fail(ErrorCode::kFormat, "load_idx: unsupported type byte in " + path);
  }
  const std::uint8_t ndim = r.u8();
  require(ndim >= 1, ErrorCode::kFormat, "load_idx: zero dimensions in " + path);
  for (int i = 0; i < ndim; ++i) t.dims.push_back(r.u32be());
  const std::size_t count = t.count();
  const std::size_t width = t.type == 0x08 ? 1 : 4;
  if (r.remaining() != count * width) {
    fail(ErrorCode::kFormat, "load_idx: truncated payload in " + path);
  }
  t.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (t.type == 0x08) {
      t.data[i] = r.u8() / 255.0;
    } else {
      t.data[i] = static_cast<double>(std::bit_cast<float>(r.u32be()));
    }
  }
  return t;
}

void save_idx(const std::string& path, const IdxTensor& t) {
  require(t.type == 0x08 || t.type == 0x0D, ErrorCode::kInvalidArgument,
          "save_idx: unsupported type byte");
  require(!t.dims.empty() && t.dims.size() < 256, ErrorCode::kInvalidArgument,
          "save_idx: bad dimension count");
  require_same_dim(t.data.size(), t.count(), "save_idx payload");
  Writer w;
  w.u8(0);
  w.u8(0);
  w.u8(t.type);
  w.u8(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) w.u32be(d);
  for (double v : t.data) {
    if (t.type == 0x08) {
      require(v >= 0.0 && v <= 1.0, ErrorCode::kInvalidArgument, "save_idx: uint8 value out of [0,1]");
      w.u8(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    } else {
      w.u32be(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  write_file(path, w.buf);
}

LabeledDataset load_idx_dataset(const std::string& images, const std::string& labels) {
  const IdxTensor x = load_idx(images);
  const IdxTensor y = load_idx(labels);
  require(y.dims.size() == 1 && y.type == 0x08, ErrorCode::kFormat,
          "load_idx_dataset: labels must be a 1-D uint8 tensor");
  require(x.dims.size() >= 2, ErrorCode::kFormat, "load_idx_dataset: images need >= 2 dims");
  require(x.dims[0] == y.dims[0], ErrorCode::kDimensionMismatch,
          "load_idx_dataset: image and label counts differ");
  LabeledDataset ds;
  ds.n = x.dims[0];
  ds.d = x.count() / ds.n;
  ds.image_like = true;
  ds.inputs = x.data;
  ds.labels.resize(ds.n);
  std::uint32_t max_label = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    ds.labels[i] = static_cast<std::uint32_t>(std::lround(y.data[i] * 255.0));
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  ds.manifest = {{"source", "idx"}, {"images", images}, {"labels", labels}};
  ds.validate();
  return ds;
}

void save_dataset(const std::string& path, const LabeledDataset& ds) {
  ds.validate();
  Writer w;
  w.raw("RFD1");
  w.u32le(static_cast<std::uint32_t>(ds.n));
  w.u32le(static_cast<std::uint32_t>(ds.d));
  w.u32le(static_cast<std::uint32_t>(ds.num_classes));
  w.u32le(ds.image_like ? kFlagImageLike : 0u);
  for (double v : ds.inputs) w.f64le(v);
  for (auto l : ds.labels) w.u32le(l);
  const std::string manifest = ds.manifest.dump();
  w.u32le(static_cast<std::uint32_t>(manifest.size()));
  w.raw(manifest);
  write_file(path, w.buf);
}

LabeledDataset load_dataset(const std::string& path) {
  const auto buf = read_file(path);
  Reader r(buf, "load_dataset(" + path + ")");
  if (buf.size() < 4 || r.raw(4) != "RFD1") fail(ErrorCode::kFormat, "load_dataset: magic mismatch");
  LabeledDataset ds;
  ds.n = r.u32le();
  ds.d = r.u32le();
  ds.num_classes = r.u32le();
  const std::uint32_t flags = r.u32le();
  ds.image_like = (flags & kFlagImageLike) != 0;
  r.need(ds.n * ds.d * 8 + ds.n * 4);
  ds.inputs.resize(ds.n * ds.d);
  for (double& v : ds.inputs) v = r.f64le();
  ds.labels.resize(ds.n);
  for (auto& l : ds.labels) l = r.u32le();
  const std::uint32_t mlen = r.u32le();
  const std::string manifest = r.raw(mlen);
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "load_dataset: size mismatch (trailing bytes)");
  try {
    ds.manifest = Json::parse(manifest);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, std::string("load_dataset: manifest parse failure: ") + e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace robfeat
