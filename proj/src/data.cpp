#include "mtkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mtkd/rng.hpp"

namespace mtkd {

namespace {

using nlohmann::json;

Matrix random_orthogonal(int dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix g(dim, dim);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) g(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  // Fix the per-column sign so the factorization is unique.
  const Matrix r_mat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < dim; ++c) {
    if (r_mat(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  return q;
}

Vector random_direction(int dim, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  const double norm = v.norm();
  if (norm == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& jsonl_path) {
  std::filesystem::path p = jsonl_path;
  p.replace_extension();
  p += ".manifest.json";
  return p;
}

}  // namespace

Index DatasetManifest::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == name) return static_cast<Index>(i);
  }
  return -1;
}

int DatasetManifest::file_split_count(const std::string& language) const {
  const auto it = splits_per_language.find(language);
  if (it == splits_per_language.end()) return 0;
  // A single-split language carries its fixed partition as two file splits.
  return it->second == 1 ? 2 : it->second;
}

bool DatasetManifest::has_language(const std::string& language) const {
  return splits_per_language.count(language) > 0;
}

GeneratorSpec GeneratorSpec::desk(std::uint64_t seed) {
  GeneratorSpec spec;
  spec.class_count = 4;
  spec.feature_dim = 16;
  spec.class_names = {"angry", "happy", "neutral", "sad"};
  spec.languages = {"en", "fi", "fr"};
  spec.mean_geometry = MeanGeometry::kConfusablePairs;
  spec.class_mean_spacing = 3.0;
  spec.sigma = 1.0;
  spec.language_shift_norm = 2.0;
  spec.language_rotation_dims = 10;
  spec.master_seed = seed;
  for (std::size_t i = 0; i < spec.languages.size(); ++i) {
    LanguageLayout layout;
    layout.split_count = 1;
    layout.per_split_class_counts = {{200, 200, 200, 200}, {50, 50, 50, 50}};
    spec.layouts.push_back(layout);
  }
  return spec;
}

GeneratorSpec GeneratorSpec::table1_scaled(std::uint64_t seed, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("table1_scaled: scale must be > 0");
  }
  GeneratorSpec spec = desk(seed);
  spec.layouts.clear();

  // Session sizes of the three corpora; classes within a session are split
  // as evenly as possible, remainder to the lower class indices.
  const std::vector<std::vector<std::int64_t>> en_splits = {
      {272, 271, 271, 271},  // 1085
      {256, 256, 256, 255},  // 1023
      {288, 288, 288, 287},  // 1151
      {258, 258, 258, 257},  // 1031
      {311, 310, 310, 310},  // 1241
  };
  std::vector<std::vector<std::int64_t>> fi_splits = {{116, 115, 115, 115}};  // 461
  for (int i = 0; i < 6; ++i) fi_splits.push_back({88, 88, 87, 87});          // 350
  for (int i = 0; i < 2; ++i) fi_splits.push_back({88, 87, 87, 87});          // 349
  const std::vector<std::vector<std::int64_t>> fr_rows = {
      {105, 105, 105, 105},  // fixed train pool, 420
      {21, 21, 21, 21},      // fixed test, 84
  };

  auto scaled = [&](const std::vector<std::vector<std::int64_t>>& rows) {
    std::vector<std::vector<std::int64_t>> out = rows;
    for (auto& row : out) {
      for (auto& count : row) {
        count = std::max<std::int64_t>(
            1, std::llround(static_cast<double>(count) * scale));
      }
    }
    return out;
  };

  LanguageLayout en;
  en.split_count = static_cast<int>(en_splits.size());
  en.per_split_class_counts = scaled(en_splits);
  LanguageLayout fi;
  fi.split_count = static_cast<int>(fi_splits.size());
  fi.per_split_class_counts = scaled(fi_splits);
  LanguageLayout fr;
  fr.split_count = 1;
  fr.per_split_class_counts = scaled(fr_rows);
  spec.layouts = {en, fi, fr};
  return spec;
}

Dataset generate_dataset(const GeneratorSpec& spec) {
  const int n_classes = spec.class_count;
  const int dim = spec.feature_dim;
  if (n_classes < 2) {
    throw std::invalid_argument("generate_dataset: need at least 2 classes");
  }
  if (dim < 1) {
    throw std::invalid_argument("generate_dataset: feature dim must be >= 1");
  }
  if (spec.class_names.size() != static_cast<std::size_t>(n_classes)) {
    throw std::invalid_argument("generate_dataset: class name count != class count");
  }
  if (spec.languages.empty() || spec.layouts.size() != spec.languages.size()) {
    throw std::invalid_argument("generate_dataset: languages and layouts must align");
  }
  if (std::set<std::string>(spec.languages.begin(), spec.languages.end()).size() !=
      spec.languages.size()) {
    throw std::invalid_argument("generate_dataset: duplicate language tag");
  }
  if (spec.sigma < 0.0 || !std::isfinite(spec.sigma)) {
    throw std::invalid_argument("generate_dataset: sigma must be >= 0");
  }
  if (spec.language_shift_norm < 0.0 || !std::isfinite(spec.language_shift_norm)) {
    throw std::invalid_argument("generate_dataset: shift norm must be >= 0");
  }
  const int rotated =
      spec.language_rotation_dims < 0 ? dim : spec.language_rotation_dims;
  if (rotated > dim) {
    throw std::invalid_argument(
        "generate_dataset: rotation dims must be <= feature dim");
  }

  // All languages rotate within the same trailing directions of one shared
  // basis, so the leading directions form a language-independent subspace.
  const Matrix shared_basis =
      random_orthogonal(dim, derive_seed(spec.master_seed, "rotation-basis"));

  Matrix means = spec.class_means;
  if (means.size() == 0) {
    if (!(spec.class_mean_spacing > 0.0) || !std::isfinite(spec.class_mean_spacing)) {
      throw std::invalid_argument("generate_dataset: class mean spacing must be > 0");
    }
    const Matrix basis =
        random_orthogonal(dim, derive_seed(spec.master_seed, "class-means"));
    means = Matrix(n_classes, dim);
    if (spec.mean_geometry == MeanGeometry::kSpread) {
      if (n_classes > dim) {
        throw std::invalid_argument(
            "generate_dataset: derived class means need class count <= feature dim");
      }
      for (int c = 0; c < n_classes; ++c) {
        means.row(c) = spec.class_mean_spacing * basis.col(c).transpose();
      }
    } else {
      // Confusable pairs: pair p sits at 2*spacing along its own axis, and
      // its two members straddle that center +-spacing/2 along one contrast
      // direction shared by all pairs. Within-pair distance is `spacing`,
      // across-pair distances are >= 2*sqrt(2)*spacing. An unpaired last
      // class stays at its pair center. When the language rotations leave a
      // shared subspace, the contrast direction is anchored inside it, so
      // every language separates pair members along the same axis while the
      // pair placement itself is language-rotated.
      const int n_pairs = (n_classes + 1) / 2;
      if (n_pairs + 1 > dim) {
        throw std::invalid_argument(
            "generate_dataset: paired class means need ceil(K/2) + 1 <= feature dim");
      }
      Matrix frame(dim, n_pairs + 1);
      frame.col(0) = rotated < dim ? shared_basis.col(0) : basis.col(n_pairs);
      for (int p = 0; p < n_pairs; ++p) frame.col(p + 1) = basis.col(p);
      const Matrix ortho = Eigen::HouseholderQR<Matrix>(frame).householderQ() *
                           Matrix::Identity(dim, n_pairs + 1);
      const Vector contrast = ortho.col(0);
      for (int c = 0; c < n_classes; ++c) {
        const int pair = c / 2;
        const double side = (c % 2 == 0) ? 0.5 : -0.5;
        Vector mean = 2.0 * spec.class_mean_spacing * ortho.col(pair + 1);
        if (c + 1 < n_classes || n_classes % 2 == 0) {
          mean += side * spec.class_mean_spacing * contrast;
        }
        means.row(c) = mean.transpose();
      }
    }
  }
  if (means.rows() != n_classes || means.cols() != dim) {
    throw std::invalid_argument("generate_dataset: class mean shape mismatch");
  }
  for (int a = 0; a < n_classes; ++a) {
    for (int b = a + 1; b < n_classes; ++b) {
      if ((means.row(a) - means.row(b)).norm() == 0.0) {
        throw std::invalid_argument("generate_dataset: class means must be distinct");
      }
    }
  }

  Dataset out;
  out.manifest.class_count = n_classes;
  out.manifest.feature_dim = dim;
  out.manifest.class_names = spec.class_names;
  out.manifest.languages = spec.languages;
  out.manifest.seed = spec.master_seed;
  out.manifest.synthetic = true;

  for (std::size_t li = 0; li < spec.languages.size(); ++li) {
    const std::string& lang = spec.languages[li];
    const GeneratorSpec::LanguageLayout& layout = spec.layouts[li];
    if (layout.split_count < 1) {
      throw std::invalid_argument("generate_dataset: split count must be >= 1");
    }
    const std::size_t expected_rows =
        layout.split_count == 1 ? 2 : static_cast<std::size_t>(layout.split_count);
    if (layout.per_split_class_counts.size() != expected_rows) {
      throw std::invalid_argument(
          "generate_dataset: per-split count rows mismatch for language " + lang);
    }

    Matrix block = Matrix::Identity(dim, dim);
    if (rotated > 0) {
      block.bottomRightCorner(rotated, rotated) = random_orthogonal(
          rotated, derive_seed(spec.master_seed, "transform:" + lang));
    }
    const Matrix transform = shared_basis * block * shared_basis.transpose();
    // The per-language offset. When a proper shared subspace exists, the
    // offset lives entirely in the language-specific (rotated) directions:
    // coordinates along the shared axes stay identical across languages, so
    // cross-language structure anchored there is offset-free too.
    Vector shift =
        random_direction(dim, derive_seed(spec.master_seed, "shift:" + lang));
    if (rotated > 0 && rotated < dim) {
      const auto specific = shared_basis.rightCols(rotated);
      shift = (specific * (specific.transpose() * shift)).eval();
      shift.normalize();
    }
    shift *= spec.language_shift_norm;

    out.manifest.splits_per_language[lang] = layout.split_count;
    auto& count_rows = out.manifest.counts[lang];
    for (std::size_t row = 0; row < expected_rows; ++row) {
      const auto& class_counts = layout.per_split_class_counts[row];
      if (class_counts.size() != static_cast<std::size_t>(n_classes)) {
        throw std::invalid_argument(
            "generate_dataset: class count row length mismatch for language " + lang);
      }
      count_rows.push_back(class_counts);
      for (int c = 0; c < n_classes; ++c) {
        if (class_counts[c] < 1) {
          throw std::invalid_argument(
              "generate_dataset: zero sample count for language " + lang);
        }
        Rng rng(derive_seed(spec.master_seed,
                            "samples:" + lang + ":" + std::to_string(row) + ":" +
                                std::to_string(c)));
        for (std::int64_t n = 0; n < class_counts[c]; ++n) {
          Vector z(dim);
          for (int d = 0; d < dim; ++d) z[d] = rng.normal();
          LabeledSample sample;
          sample.features =
              transform * (means.row(c).transpose() + spec.sigma * z) + shift;
          sample.label = c;
          sample.language = lang;
          sample.split = static_cast<int>(row);
          sample.id = static_cast<std::int64_t>(out.samples.size());
          out.samples.push_back(std::move(sample));
        }
      }
    }
  }
  return out;
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& jsonl_path) {
  const DatasetManifest& m = dataset.manifest;
  std::ofstream f(jsonl_path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw DataError("write_jsonl: cannot open " + jsonl_path.string());
  }
  for (const LabeledSample& s : dataset.samples) {
    json j;
    j["features"] = std::vector<double>(s.features.begin(), s.features.end());
    j["label"] = m.class_names.at(static_cast<std::size_t>(s.label));
    j["language"] = s.language;
    j["split"] = s.split;
    f << j.dump() << '\n';
  }
  if (!f) {
    throw DataError("write_jsonl: write failed for " + jsonl_path.string());
  }

  json manifest;
  manifest["format_version"] = DatasetManifest::kFormatVersion;
  manifest["class_count"] = m.class_count;
  manifest["feature_dim"] = m.feature_dim;
  manifest["class_names"] = m.class_names;
  manifest["languages"] = m.languages;
  manifest["splits_per_language"] = m.splits_per_language;
  manifest["counts"] = m.counts;
  manifest["seed"] = m.seed;
  manifest["synthetic"] = m.synthetic;
  std::ofstream mf(manifest_path_for(jsonl_path), std::ios::binary | std::ios::trunc);
  if (!mf) {
    throw DataError("write_jsonl: cannot open " +
                    manifest_path_for(jsonl_path).string());
  }
  mf << manifest.dump(2) << '\n';
  if (!mf) {
    throw DataError("write_jsonl: manifest write failed");
  }
}

namespace {

DatasetManifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw DataError("load_jsonl: cannot open manifest " + path.string());
  }
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("load_jsonl: malformed manifest: " + std::string(e.what()));
  }

  DatasetManifest m;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != DatasetManifest::kFormatVersion) {
      throw DataError("load_jsonl: unsupported manifest format_version " +
                      std::to_string(version));
    }
    m.class_count = j.at("class_count").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.languages = j.at("languages").get<std::vector<std::string>>();
    m.splits_per_language =
        j.at("splits_per_language").get<std::map<std::string, int>>();
    m.counts =
        j.at("counts")
            .get<std::map<std::string, std::vector<std::vector<std::int64_t>>>>();
    if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("synthetic")) m.synthetic = j.at("synthetic").get<bool>();
  } catch (const json::exception& e) {
    throw DataError("load_jsonl: manifest field error: " + std::string(e.what()));
  }

  if (m.class_count < 2 ||
      m.class_names.size() != static_cast<std::size_t>(m.class_count)) {
    throw DataError("load_jsonl: manifest class names/count mismatch");
  }
  if (m.feature_dim < 1) {
    throw DataError("load_jsonl: manifest feature_dim must be >= 1");
  }
  if (m.languages.empty()) {
    throw DataError("load_jsonl: manifest declares no languages");
  }
  for (const std::string& lang : m.languages) {
    if (!m.splits_per_language.count(lang) || !m.counts.count(lang)) {
      throw DataError("load_jsonl: manifest missing split info for language " + lang);
    }
    if (m.splits_per_language.at(lang) < 1) {
      throw DataError("load_jsonl: manifest split count < 1 for language " + lang);
    }
    const auto& rows = m.counts.at(lang);
    if (rows.size() != static_cast<std::size_t>(m.file_split_count(lang))) {
      throw DataError("load_jsonl: manifest count rows mismatch for language " + lang);
    }
    for (const auto& row : rows) {
      if (row.size() != static_cast<std::size_t>(m.class_count)) {
        throw DataError("load_jsonl: manifest count row length mismatch for language " +
                        lang);
      }
    }
  }
  return m;
}

}  // namespace

Dataset load_jsonl(const std::filesystem::path& jsonl_path) {
  Dataset out;
  out.manifest = parse_manifest(manifest_path_for(jsonl_path));
  const DatasetManifest& m = out.manifest;

  std::ifstream f(jsonl_path, std::ios::binary);
  if (!f) {
    throw DataError("load_jsonl: cannot open " + jsonl_path.string());
  }

  std::map<std::string, std::vector<std::vector<std::int64_t>>> seen_counts;
  for (const std::string& lang : m.languages) {
    seen_counts[lang].assign(
        static_cast<std::size_t>(m.file_split_count(lang)),
        std::vector<std::int64_t>(static_cast<std::size_t>(m.class_count), 0));
  }

  std::string line;
  long line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) {
      throw ParseError(line_no, "empty line");
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    for (const char* field : {"features", "label", "language", "split"}) {
      if (!j.contains(field)) {
        throw ParseError(line_no, std::string("missing field '") + field + "'");
      }
    }

    LabeledSample s;
    try {
      const auto features = j.at("features").get<std::vector<double>>();
      s.features = Eigen::Map<const Vector>(features.data(),
                                            static_cast<Index>(features.size()));
      const std::string label = j.at("label").get<std::string>();
      s.label = m.class_index(label);
      if (s.label < 0) {
        throw ParseError(line_no, "unknown class name '" + label + "'");
      }
      s.language = j.at("language").get<std::string>();
      s.split = j.at("split").get<int>();
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("field type error: ") + e.what());
    }

    if (s.features.size() != m.feature_dim) {
      throw ParseError(line_no, "expected " + std::to_string(m.feature_dim) +
                                    " features, got " +
                                    std::to_string(s.features.size()));
    }
    if (!s.features.allFinite()) {
      throw ParseError(line_no, "non-finite feature value");
    }
    if (!m.has_language(s.language)) {
      throw ParseError(line_no, "unknown language '" + s.language + "'");
    }
    if (s.split < 0 || s.split >= m.file_split_count(s.language)) {
      throw ParseError(line_no, "split " + std::to_string(s.split) +
                                    " out of range for language " + s.language);
    }
    seen_counts[s.language][static_cast<std::size_t>(s.split)]
               [static_cast<std::size_t>(s.label)] += 1;
    s.id = static_cast<std::int64_t>(out.samples.size());
    out.samples.push_back(std::move(s));
  }

  if (out.samples.empty()) {
    throw DataError("load_jsonl: no samples in " + jsonl_path.string());
  }
  for (const std::string& lang : m.languages) {
    if (seen_counts.at(lang) != m.counts.at(lang)) {
      throw DataError("load_jsonl: sample counts do not match manifest for language " +
                      lang);
    }
  }
  return out;
}

std::vector<LabeledSample> select_split(const Dataset& dataset,
                                        const std::optional<std::string>& language,
                                        int split_id, SplitRole role) {
  const DatasetManifest& m = dataset.manifest;
  std::vector<std::string> scope;
  if (language.has_value()) {
    if (!m.has_language(*language)) {
      throw DataError("select_split: unknown language '" + *language + "'");
    }
    scope.push_back(*language);
  } else {
    scope = m.languages;
  }

  for (const std::string& lang : scope) {
    const int declared = m.splits_per_language.at(lang);
    const int max_id = declared == 1 ? 0 : declared - 1;
    if (split_id < 0 || split_id > max_id) {
      throw std::invalid_argument("select_split: split id " +
                                  std::to_string(split_id) +
                                  " out of range for language " + lang);
    }
  }

  std::vector<LabeledSample> out;
  for (const LabeledSample& s : dataset.samples) {
    if (std::find(scope.begin(), scope.end(), s.language) == scope.end()) continue;
    const bool fixed_partition = m.splits_per_language.at(s.language) == 1;
    const int test_split = fixed_partition ? 1 : split_id;
    const bool is_test = s.split == test_split;
    if ((role == SplitRole::kTest) == is_test) {
      out.push_back(s);
    }
  }
  return out;
}

int rotation_count(const Dataset& dataset,
                   const std::optional<std::string>& language) {
  const DatasetManifest& m = dataset.manifest;
  std::vector<std::string> scope;
  if (language.has_value()) {
    if (!m.has_language(*language)) {
      throw DataError("rotation_count: unknown language '" + *language + "'");
    }
    scope.push_back(*language);
  } else {
    scope = m.languages;
  }
  int rotations = 0;
  for (const std::string& lang : scope) {
    const int declared = m.splits_per_language.at(lang);
    const int valid_ids = declared == 1 ? 1 : declared;
    rotations = rotations == 0 ? valid_ids : std::min(rotations, valid_ids);
  }
  return rotations;
}

std::vector<std::vector<LabeledSample>> make_batches(
    const std::vector<LabeledSample>& samples, std::size_t batch_size,
    std::uint64_t shuffle_seed, int epoch) {
  if (batch_size < 1) {
    throw std::invalid_argument("make_batches: batch size must be >= 1");
  }
  std::vector<LabeledSample> shuffled = samples;
  Rng rng(derive_seed(shuffle_seed, "epoch:" + std::to_string(epoch)));
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(shuffled[i - 1], shuffled[j]);
  }
  std::vector<std::vector<LabeledSample>> batches;
  for (std::size_t start = 0; start < shuffled.size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, shuffled.size());
    batches.emplace_back(shuffled.begin() + static_cast<std::ptrdiff_t>(start),
                         shuffled.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

}  // namespace mtkd
