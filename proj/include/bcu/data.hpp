// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bcu/rng.hpp"
#include "bcu/tensor.hpp"

namespace bcu {

/// Input normalization applied when a batch is handed to a network:
/// (x - mean) / std. Pixel storage stays in [0, 1].
struct Normalization {
  double mean = 0.0;
  double std = 1.0;
};

/// Images N x C x H x W in [0, 1] with optional labels (absent for unlabeled
/// defense data).
struct Dataset {
  TensorF images;
  std::optional<std::vector<int>> labels;
  std::string name;
  int num_classes = 10;
  Normalization normalization;

  Index size() const { return images.empty() ? 0 : images.dim(0); }
  bool labeled() const { return labels.has_value(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  Index sample_size() const { return size() ? images.size() / size() : 0; }

  const std::vector<int>& require_labels(const std::string& what) const;

  /// Samples at `indices`, in that order. Keeps labels, name and normalization.
  Dataset subset(std::span<const Index> indices) const;
  Dataset without_labels() const;
  /// Throws InputError if any label is outside [0, num_classes) or shapes are inconsistent.
  void validate() const;
};

/// Reads IDX image (magic 0x00000803) and optional label (0x00000801) files.
/// Gzip-compressed files are accepted transparently. Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt, int num_classes = 10);

/// Writes 8-bit IDX files (gzip when the path ends in .gz); values are
/// quantized as round(255 * x).
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::optional<std::filesystem::path>& labels_path = std::nullopt);

struct IdxPair {
  std::filesystem::path images;
  std::optional<std::filesystem::path> labels;
};

/// JSON dataset manifest: name, num_classes, normalization and train/test file pairs
/// (paths relative to the manifest).
struct DatasetManifest {
  std::string name;
  int num_classes = 10;
  Normalization normalization;
  std::optional<IdxPair> train;
  std::optional<IdxPair> test;

  static DatasetManifest load(const std::filesystem::path& path);
  Dataset load_train() const;
  Dataset load_test() const;
};

struct SplitSpec {
  Index defense_size = 0;
  std::uint64_t seed = 0;
};

struct DefenseTestSplit {
  Dataset defense;  // unlabeled
  Dataset test;     // labeled
  std::vector<Index> defense_indices;  // positions of the defense samples in the source set
};

/// Partitions a labeled test set into an unlabeled defense set of
/// `defense_size` samples and the labeled remainder. Both keep source order.
DefenseTestSplit split_defense_test(const Dataset& test, const SplitSpec& spec);

/// `count` samples drawn uniformly without replacement (source order kept).
Dataset random_subset(const Dataset& data, Index count, std::uint64_t seed, const std::string& stream);

enum class AugmentKind { none, crop, crop_flip };

struct AugmentPolicy {
  AugmentKind kind = AugmentKind::crop;
  Index pad = 2;

  static AugmentPolicy none() { return {AugmentKind::none, 0}; }
};

std::string to_string(AugmentKind kind);
AugmentKind parse_augment_kind(const std::string& text);

/// Horizontal mirror of every image in a B x C x H x W batch.
TensorF flip_horizontal(const TensorF& batch);

/// Random crop from a reflect-padded image (offsets uniform in [0, 2*pad]) and,
/// for crop_flip, a horizontal mirror with probability 0.5; per sample.
TensorF augment(const TensorF& batch, const AugmentPolicy& policy, Rng& rng);

/// Index lists for one epoch: a permutation that is a pure function of
/// (seed, epoch), cut into batches; the last partial batch is kept.
std::vector<std::vector<Index>> batches(Index dataset_size, Index batch_size, std::uint64_t seed, int epoch);

/// Raw [0, 1] images at `indices` as a B x C x H x W tensor.
TensorF gather_images(const Dataset& data, std::span<const Index> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const Index> indices);

/// Applies the dataset normalization for network consumption.
TensorF normalize(TensorF batch, const Normalization& norm);

/// Center crop / zero pad and nearest-neighbour resize so images match
/// `sample_shape` (C x H x W). Channel counts must agree or source must be 1.
Dataset fit_to_shape(const Dataset& data, const Shape& sample_shape);

/// Digest of images and labels, for pairing metrics computed on the same sets.
std::string dataset_hash(const Dataset& data);

}  // namespace bcu
