// SPDX-License-Identifier: Apache-2.0
#include "bcu/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "bcu/model_io.hpp"

namespace bcu {
namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("dataset file '" + path.string() + "' does not exist");
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw ConfigError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const std::string message = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw FormatError("'" + path.string() + "': gzip error: " + message);
  }
  return out;
}

void write_maybe_gzip(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (path.extension() != ".gz") {
    write_file_bytes(path, bytes);
    return;
  }
  gzFile f = gzopen(path.string().c_str(), "wb9");
  if (!f) throw ConfigError("cannot open '" + path.string() + "' for writing");
  const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
  if (written != static_cast<int>(bytes.size())) throw ConfigError("failed writing '" + path.string() + "'");
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::filesystem::path& path) {
  if (b.size() < at + 4) {
    throw FormatError("'" + path.string() + "': truncated IDX header at byte offset " + std::to_string(at));
  }
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

IdxPair read_pair(const nlohmann::json& j, const std::filesystem::path& base, const std::string& key) {
  IdxPair pair;
  pair.images = base / j.at("images").get<std::string>();
  if (j.contains("labels") && !j["labels"].is_null()) pair.labels = base / j["labels"].get<std::string>();
  (void)key;
  return pair;
}

}  // namespace

const std::vector<int>& Dataset::require_labels(const std::string& what) const {
  if (!labels) throw InputError(what + " needs a labeled dataset, '" + name + "' has no labels");
  return *labels;
}

Dataset Dataset::subset(std::span<const Index> indices) const {
  Dataset out;
  out.name = name;
  out.num_classes = num_classes;
  out.normalization = normalization;
  out.images = gather_images(*this, indices);
  if (labels) out.labels = gather_labels(*this, indices);
  return out;
}

Dataset Dataset::without_labels() const {
  Dataset out = *this;
  out.labels.reset();
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw InputError("dataset '" + name + "' images must be N x C x H x W");
  if (labels) {
    if (static_cast<Index>(labels->size()) != size()) {
      throw InputError("dataset '" + name + "' has " + std::to_string(labels->size()) + " labels for " +
                       std::to_string(size()) + " images");
    }
    for (int y : *labels) {
      if (y < 0 || y >= num_classes) {
        throw InputError("dataset '" + name + "' label " + std::to_string(y) + " outside [0, " +
                         std::to_string(num_classes) + ")");
      }
    }
  }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::optional<std::filesystem::path>& labels_path,
                 int num_classes) {
  const auto raw = read_maybe_gzip(images_path);
  if (be32(raw, 0, images_path) != kIdxImages) {
    throw FormatError("'" + images_path.string() + "': bad IDX image magic at byte offset 0");
  }
  const Index n = be32(raw, 4, images_path), h = be32(raw, 8, images_path), w = be32(raw, 12, images_path);
  const std::size_t expected = 16 + static_cast<std::size_t>(n * h * w);
  if (raw.size() != expected) {
    throw FormatError("'" + images_path.string() + "': expected " + std::to_string(expected) + " bytes for " +
                      std::to_string(n) + " images of " + std::to_string(h) + "x" + std::to_string(w) + ", found " +
                      std::to_string(raw.size()));
  }
  Dataset data;
  data.name = images_path.filename().string();
  data.num_classes = num_classes;
  data.images = TensorF({n, 1, h, w});
  for (Index i = 0; i < data.images.size(); ++i) {
    data.images[i] = static_cast<float>(raw[16 + static_cast<std::size_t>(i)]) / 255.0f;
  }

  if (labels_path) {
    const auto lab = read_maybe_gzip(*labels_path);
    if (be32(lab, 0, *labels_path) != kIdxLabels) {
      throw FormatError("'" + labels_path->string() + "': bad IDX label magic at byte offset 0");
    }
    const Index count = be32(lab, 4, *labels_path);
    if (count != n) {
      throw FormatError("label count " + std::to_string(count) + " in '" + labels_path->string() +
                        "' does not match image count " + std::to_string(n));
    }
    if (lab.size() != 8 + static_cast<std::size_t>(count)) {
      throw FormatError("'" + labels_path->string() + "': truncated label data");
    }
    data.labels = std::vector<int>(lab.begin() + 8, lab.end());
    for (int y : *data.labels) {
      if (y >= num_classes) {
        throw FormatError("'" + labels_path->string() + "': label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
      }
    }
  }
  return data;
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::optional<std::filesystem::path>& labels_path) {
  if (data.images.rank() != 4 || data.images.dim(1) != 1) {
    throw ConfigError("IDX export supports single-channel N x 1 x H x W images");
  }
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxImages);
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  put_be32(out, static_cast<std::uint32_t>(data.images.dim(2)));
  put_be32(out, static_cast<std::uint32_t>(data.images.dim(3)));
  for (Index i = 0; i < data.images.size(); ++i) {
    const float v = std::clamp(data.images[i], 0.0f, 1.0f);
    out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
  }
  write_maybe_gzip(images_path, out);
  if (labels_path) {
    const auto& labels = data.require_labels("write_idx");
    std::vector<std::uint8_t> lab;
    put_be32(lab, kIdxLabels);
    put_be32(lab, static_cast<std::uint32_t>(labels.size()));
    for (int y : labels) lab.push_back(static_cast<std::uint8_t>(y));
    write_maybe_gzip(*labels_path, lab);
  }
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  const auto base = path.parent_path();
  DatasetManifest m;
  try {
    m.name = j.value("name", path.stem().string());
    m.num_classes = j.value("num_classes", 10);
    if (j.contains("normalization")) {
      m.normalization.mean = j["normalization"].value("mean", 0.0);
      m.normalization.std = j["normalization"].value("std", 1.0);
    }
    if (j.contains("train")) m.train = read_pair(j["train"], base, "train");
    if (j.contains("test")) m.test = read_pair(j["test"], base, "test");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset manifest '" + path.string() + "': " + e.what());
  }
  if (m.num_classes < 2) throw ConfigError("dataset manifest '" + path.string() + "': num_classes must be >= 2");
  if (!(m.normalization.std > 0.0)) throw ConfigError("dataset manifest normalization.std must be positive");
  return m;
}

Dataset DatasetManifest::load_train() const {
  if (!train) throw ConfigError("dataset '" + name + "' has no train split");
  Dataset d = load_idx(train->images, train->labels, num_classes);
  d.name = name + "/train";
  d.normalization = normalization;
  return d;
}

Dataset DatasetManifest::load_test() const {
  if (!test) throw ConfigError("dataset '" + name + "' has no test split");
  Dataset d = load_idx(test->images, test->labels, num_classes);
  d.name = name + "/test";
  d.normalization = normalization;
  return d;
}

DefenseTestSplit split_defense_test(const Dataset& test, const SplitSpec& spec) {
  test.require_labels("split_defense_test");
  const Index n = test.size();
  if (spec.defense_size < 0 || spec.defense_size >= n) {
    throw ConfigError("defense_size " + std::to_string(spec.defense_size) + " must lie in [0, " +
                      std::to_string(n) + ")");
  }
  Rng rng(spec.seed, "defense-split");
  std::vector<Index> perm = rng.permutation<Index>(n);
  std::vector<Index> defense(perm.begin(), perm.begin() + spec.defense_size);
  std::vector<Index> rest(perm.begin() + spec.defense_size, perm.end());
  std::sort(defense.begin(), defense.end());
  std::sort(rest.begin(), rest.end());
  DefenseTestSplit out{test.subset(defense).without_labels(), test.subset(rest), defense};
  out.defense.name = test.name + "/defense";
  return out;
}

Dataset random_subset(const Dataset& data, Index count, std::uint64_t seed, const std::string& stream) {
  if (count < 0 || count > data.size()) {
    throw ConfigError("cannot draw " + std::to_string(count) + " samples from '" + data.name + "' of size " +
                      std::to_string(data.size()));
  }
  Rng rng(seed, stream);
  std::vector<Index> picks = rng.sample_without_replacement<Index>(data.size(), count);
  std::sort(picks.begin(), picks.end());
  return data.subset(picks);
}

std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::none:
      return "none";
    case AugmentKind::crop:
      return "crop";
    case AugmentKind::crop_flip:
      return "crop_flip";
  }
  return "none";
}

AugmentKind parse_augment_kind(const std::string& text) {
  if (text == "none") return AugmentKind::none;
  if (text == "crop") return AugmentKind::crop;
  if (text == "crop_flip" || text == "crop+flip") return AugmentKind::crop_flip;
  throw ConfigError("unknown augmentation policy '" + text + "' (none, crop, crop_flip)");
}

TensorF flip_horizontal(const TensorF& batch) {
  TensorF out(batch.shape());
  const Index w = batch.dim(3), rows = batch.size() / w;
  for (Index r = 0; r < rows; ++r) {
    for (Index j = 0; j < w; ++j) out[r * w + j] = batch[r * w + (w - 1 - j)];
  }
  return out;
}

TensorF augment(const TensorF& batch, const AugmentPolicy& policy, Rng& rng) {
  if (policy.kind == AugmentKind::none) return batch;
  if (policy.pad < 0) throw ConfigError("augmentation pad must be non-negative");
  const Index b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const Index pad = policy.pad;
  if (pad >= h || pad >= w) throw ConfigError("augmentation pad must be smaller than the image");
  auto reflect = [](Index i, Index n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  TensorF out(batch.shape());
  for (Index s = 0; s < b; ++s) {
    const Index dy = pad ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
    const Index dx = pad ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
    const bool flip = policy.kind == AugmentKind::crop_flip && rng.bernoulli(0.5);
    for (Index ch = 0; ch < c; ++ch) {
      const float* src = batch.data() + (s * c + ch) * h * w;
      float* dst = out.data() + (s * c + ch) * h * w;
      for (Index i = 0; i < h; ++i) {
        const Index si = reflect(i + dy, h);
        for (Index j = 0; j < w; ++j) {
          const Index jj = flip ? w - 1 - j : j;
          dst[i * w + j] = src[si * w + reflect(jj + dx, w)];
        }
      }
    }
  }
  return out;
}

std::vector<std::vector<Index>> batches(Index dataset_size, Index batch_size, std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  Rng rng(seed, "data-shuffle", static_cast<std::uint64_t>(epoch));
  const std::vector<Index> perm = rng.permutation<Index>(dataset_size);
  std::vector<std::vector<Index>> out;
  for (Index start = 0; start < dataset_size; start += batch_size) {
    const Index end = std::min(dataset_size, start + batch_size);
    out.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return out;
}

TensorF gather_images(const Dataset& data, std::span<const Index> indices) {
  Shape shape = data.images.shape();
  shape[0] = static_cast<Index>(indices.size());
  TensorF out(shape);
  const Index stride = data.sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index src = indices[i];
    if (src < 0 || src >= data.size()) throw InputError("sample index " + std::to_string(src) + " out of range");
    out.values().segment(static_cast<Index>(i) * stride, stride) = data.images.values().segment(src * stride, stride);
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const Index> indices) {
  const auto& labels = data.require_labels("gather_labels");
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

TensorF normalize(TensorF batch, const Normalization& norm) {
  if (norm.mean == 0.0 && norm.std == 1.0) return batch;
  batch.values().array() = (batch.values().array() - static_cast<float>(norm.mean)) / static_cast<float>(norm.std);
  return batch;
}

Dataset fit_to_shape(const Dataset& data, const Shape& sample_shape) {
  if (data.sample_shape() == sample_shape) return data;
  if (sample_shape.size() != 3) throw ConfigError("fit_to_shape expects a C x H x W target");
  const Index sc = data.images.dim(1), sh = data.images.dim(2), sw = data.images.dim(3);
  const Index tc = sample_shape[0], th = sample_shape[1], tw = sample_shape[2];
  if (sc != tc && sc != 1) {
    throw ConfigError("cannot map " + std::to_string(sc) + "-channel images to " + std::to_string(tc) + " channels");
  }
  // Center-crop the longer side to a square-ish aspect, then nearest resize.
  const double src_aspect = static_cast<double>(sw) / static_cast<double>(sh);
  const double dst_aspect = static_cast<double>(tw) / static_cast<double>(th);
  Index ch = sh, cw = sw;
  if (src_aspect > dst_aspect) {
    cw = std::max<Index>(1, std::lround(static_cast<double>(sh) * dst_aspect));
  } else {
    ch = std::max<Index>(1, std::lround(static_cast<double>(sw) / dst_aspect));
  }
  const Index oy = (sh - ch) / 2, ox = (sw - cw) / 2;
  Dataset out = data;
  out.images = TensorF({data.size(), tc, th, tw});
  for (Index n = 0; n < data.size(); ++n) {
    for (Index c = 0; c < tc; ++c) {
      const float* src = data.images.data() + (n * sc + (sc == 1 ? 0 : c)) * sh * sw;
      float* dst = out.images.data() + (n * tc + c) * th * tw;
      for (Index i = 0; i < th; ++i) {
        const Index si = oy + std::min(ch - 1, (i * ch) / th);
        for (Index j = 0; j < tw; ++j) dst[i * tw + j] = src[si * sw + ox + std::min(cw - 1, (j * cw) / tw)];
      }
    }
  }
  return out;
}

std::string dataset_hash(const Dataset& data) {
  std::uint64_t h = fnv1a64(data.images.data(), static_cast<std::size_t>(data.images.size()) * sizeof(float));
  for (Index d : data.images.shape()) h = fnv1a64(&d, sizeof d, h);
  if (data.labels) h = fnv1a64(data.labels->data(), data.labels->size() * sizeof(int), h);
  return hex64(h);
}

}  // namespace bcu
