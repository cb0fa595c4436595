#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtkd/types.hpp"

namespace mtkd {

struct LabeledSample {
  Vector features;
  Index label = 0;        // class index in [0, K)
  std::string language;
  int split = 0;          // split id carried in the file
  std::int64_t id = 0;    // position in the dataset; assigned, not serialized
};

/// Sidecar metadata for a dataset file. counts[language][split][class] holds
/// the per-class sample count of each file split. A language with
/// splits_per_language == 1 carries a fixed train/test partition as file
/// splits 0 (train pool) and 1 (test), so its counts list has two rows.
struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  int class_count = 0;
  int feature_dim = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> languages;
  std::map<std::string, int> splits_per_language;
  std::map<std::string, std::vector<std::vector<std::int64_t>>> counts;
  std::uint64_t seed = 0;
  bool synthetic = false;

  Index class_index(const std::string& name) const;  // -1 when unknown
  int file_split_count(const std::string& language) const;
  bool has_language(const std::string& language) const;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledSample> samples;
};

/// Layout of derived class means when `class_means` is left empty.
/// kSpread puts every mean at spacing * (random orthonormal direction), so
/// all class pairs are equally far apart (spacing * sqrt(2)).
/// kConfusablePairs places classes (0,1), (2,3), ... `spacing` apart along
/// one contrast direction shared by all pairs, while the pairs themselves
/// sit far apart on per-pair axes. Classifiers then show a stable confusion
/// pattern inside each pair. When the language rotations leave a shared
/// subspace (language_rotation_dims < feature_dim), the contrast direction
/// is anchored inside it, so the boundary between pair members has the same
/// orientation in every language and that structure transfers.
enum class MeanGeometry { kSpread, kConfusablePairs };

/// Synthetic data recipe: samples of (language l, class c) are drawn as
///   x = R_l * (mu_c + sigma * z) + shift_l,   z ~ N(0, I)
/// with R_l a seeded orthogonal matrix acting on language_rotation_dims
/// directions of a shared basis and shift_l a seeded random direction
/// scaled to language_shift_norm. When a proper shared subspace exists
/// (0 < language_rotation_dims < feature_dim), shift_l is drawn inside the
/// rotated directions, so coordinates along the shared axes are identical
/// across languages.

struct GeneratorSpec {
  int class_count = 4;
  int feature_dim = 16;
  std::vector<std::string> class_names;
  std::vector<std::string> languages;
  Matrix class_means;  // K x D; empty means "derive from the seed"
  MeanGeometry mean_geometry = MeanGeometry::kSpread;
  double class_mean_spacing = 3.0;
  double sigma = 1.0;
  double language_shift_norm = 2.0;
  // How many directions of a shared seeded basis the per-language rotation
  // acts on; the remaining feature_dim - k directions pass through unchanged
  // for every language, modeling structure all languages share. -1 means
  // rotate everything (no shared subspace).
  int language_rotation_dims = -1;
  // Aligned with `languages`. split_count >= 2 means cross-validation
  // rotation over that many file splits; split_count == 1 means a fixed
  // partition with per_split_class_counts rows [train pool, test].
  struct LanguageLayout {
    int split_count = 1;
    std::vector<std::vector<std::int64_t>> per_split_class_counts;
  };
  std::vector<LanguageLayout> layouts;
  std::uint64_t master_seed = 1;

  /// 3 languages, K=4, D=16, 200 train + 50 test per language-class,
  /// fixed partition per language.
  static GeneratorSpec desk(std::uint64_t seed);

  /// Three-corpus layout with uneven cross-validation splits
  /// (en: 5 splits, fi: 9 splits, fr: fixed 420/84 partition), scaled by
  /// `scale` with a floor of 1 sample per class.
  static GeneratorSpec table1_scaled(std::uint64_t seed, double scale = 1.0);
};

Dataset generate_dataset(const GeneratorSpec& spec);

/// Writes samples to `jsonl_path` (one JSON object per line) and the
/// manifest to the sibling "<stem>.manifest.json". Byte-deterministic.
void write_jsonl(const Dataset& dataset, const std::filesystem::path& jsonl_path);

/// Loads a JSONL dataset plus its sibling manifest. Malformed lines raise
/// ParseError with the 1-based line number; an empty sample file raises
/// DataError("no samples").
Dataset load_jsonl(const std::filesystem::path& jsonl_path);

enum class SplitRole { kTrain, kTest };

/// Cross-validation selection: test = samples whose file split equals
/// split_id, train = all other splits. For a fixed-partition language
/// (split count 1) the file splits are 0 = train pool, 1 = test, and the
/// only valid split_id is 0. A language filter restricts to one language;
/// no filter keeps every language.
std::vector<LabeledSample> select_split(const Dataset& dataset,
                                        const std::optional<std::string>& language,
                                        int split_id, SplitRole role);

/// Largest valid select_split id across the given scope (1 for
/// fixed-partition languages, split count otherwise, minimized over scope).
int rotation_count(const Dataset& dataset,
                   const std::optional<std::string>& language);

/// Deterministic Fisher-Yates shuffle keyed by (seed, epoch), then chunks
/// of batch_size; the final short batch is kept.
std::vector<std::vector<LabeledSample>> make_batches(
    const std::vector<LabeledSample>& samples, std::size_t batch_size,
    std::uint64_t shuffle_seed, int epoch);

}  // namespace mtkd
