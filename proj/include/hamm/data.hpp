#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hamm/encoder.hpp"
#include "hamm/rng.hpp"

namespace hamm {

inline constexpr std::array<double, 3> kChannelMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kChannelStd{0.229, 0.224, 0.225};

/// One eye: fundus, OCT and VF images as normalized [3,S,S] tensors. An
/// absent modality is an all-zero tensor with its presence flag cleared.
struct MultimodalSample {
  std::string id;
  std::array<Tensor, kNumModalities> images;
  int label = 0;
  std::array<bool, kNumModalities> present{true, true, true};

  int image_size() const;
  int present_count() const;
};

/// 8-bit interleaved RGB of an S×S image to a normalized [3,S,S] tensor.
Tensor normalize_rgb8(std::span<const std::uint8_t> rgb, int size);
std::vector<std::uint8_t> denormalize_rgb8(const Tensor& image);

/// Stacks the given samples into per-modality [N,3,S,S] batches.
ModalityInputs stack_batch(std::span<const MultimodalSample* const> samples);

// --- splitting -------------------------------------------------------------

struct SplitManifest {
  std::vector<std::string> train, val, test;
  std::array<double, 3> ratios{0.6, 0.2, 0.2};
  /// counts[split][class]
  std::array<std::array<int, 4>, 3> counts{};
};

/// Per-class shuffled split with largest-remainder rounding. Classes that
/// occur need at least five samples; ratios must sum to one.
SplitManifest stratified_split(std::span<const MultimodalSample> samples, std::array<double, 3> ratios,
                               std::uint64_t seed);

/// Samples of `pool` whose ids are listed, in list order.
std::vector<MultimodalSample> select(std::span<const MultimodalSample> pool, std::span<const std::string> ids);

// --- augmentation ----------------------------------------------------------

struct AugmentationPolicy {
  double flip_probability = 0.5;
  double jitter_min = 0.9;
  double jitter_max = 1.1;
  double crop_scale_min = 0.8;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  bool synchronous_horizontal_flip = true;

  /// Leaves every sample unchanged.
  static AugmentationPolicy identity();
};

/// Fundus: resized crop, colour jitter, vertical flip. OCT: colour jitter.
/// VF: vertical flip. One horizontal-flip draw is shared by all three.
MultimodalSample augment(const MultimodalSample& sample, const AugmentationPolicy& policy, Rng& rng);

/// Mirrors a [3,S,S] image left-right (horizontal) or top-bottom.
Tensor flip_image(const Tensor& image, bool horizontal);

// --- missing modalities ----------------------------------------------------

struct MissingnessConfig {
  double p_full = 0.5;
  double p_drop_one = 0.25;
  double p_drop_two = 0.25;

  /// Throws ConfigError unless the probabilities are non-negative and sum to 1.
  void validate() const;
};

/// Zero-fills 0, 1 or 2 randomly chosen modalities of a fully present sample.
MultimodalSample sample_missingness(const MultimodalSample& sample, const MissingnessConfig& config, Rng& rng);

MultimodalSample drop_modalities(const MultimodalSample& sample, std::span<const int> dropped);

struct MissingEvalConfig {
  /// Modified copies added, as a fraction of the split size.
  double modified_fraction = 1.0;
  /// Share of the modified copies that lose one modality; the rest lose two.
  double one_missing_share = 0.5;
};

struct MissingEvalSet {
  std::vector<MultimodalSample> samples;
  int full = 0, one_missing = 0, two_missing = 0;
  /// Among one-missing copies: count per dropped modality. Among two-missing
  /// copies: count per kept modality.
  std::array<int, kNumModalities> dropped_one{}, kept_two{};
  /// Non-empty when a count did not divide evenly.
  std::string remainder_note;
};

/// Originals followed by modified copies whose missing patterns cycle over
/// the modalities so each pattern occurs equally often.
MissingEvalSet build_missing_eval_set(std::span<const MultimodalSample> split, const MissingEvalConfig& config,
                                      std::uint64_t seed);

// --- synthetic data --------------------------------------------------------

struct SynthConfig {
  /// Std-dev of per-modality disease severity around the stage.
  double discordance = 0.5;
  double pixel_noise = 0.05;
  /// Per-modality probability of a heavy artifact (noise burst + occluder).
  double artifact_probability = 0.0;
};

/// Stage-dependent renderings: VF dark patches grow, the fundus cup-to-disc
/// ratio grows and the OCT bright band thins with stage. Pixels are quantized
/// to 8 bits before normalization so the set round-trips through image files.
std::vector<MultimodalSample> generate_synthetic(int n_per_class, int image_size, std::uint64_t seed,
                                                 const SynthConfig& config = {});

// --- on-disk format --------------------------------------------------------

/// Writes one binary PPM per present modality plus manifest.txt with records
/// "id fundus oct vf label presence" ("-" for an absent image).
void write_dataset(const std::filesystem::path& dir, std::span<const MultimodalSample> samples);
/// Reads a directory written by write_dataset. Throws DataError.
std::vector<MultimodalSample> read_dataset(const std::filesystem::path& dir);

void write_ppm(const std::filesystem::path& path, std::span<const std::uint8_t> rgb, int size);
std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, int& size);

}  // namespace hamm
