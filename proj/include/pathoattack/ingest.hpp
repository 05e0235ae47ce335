#pragma once

// Class-per-folder patch datasets: scanning, deterministic sampling, stats.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pathoattack/core.hpp"

namespace pathoattack {

struct DatasetManifest {
  std::filesystem::path root;
  LabelSet label_set;
  std::vector<DatasetRecord> records;  // sorted by id
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> warnings;
};

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".tif" || ext == ".tiff" || ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Scans root/CLASS/*.{tif,tiff,png,jpg,jpeg}. Labels are the sorted folder
/// names; record ids are '/'-separated paths relative to root. Anything else
/// is skipped with a warning. Decodability is checked at load time.
inline DatasetManifest scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root '" + root.string() + "' is not a directory");

  DatasetManifest m;
  m.root = root;
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with('.')) continue;
    if (entry.is_directory()) {
      classes.push_back(name);
    } else {
      m.warnings.push_back("skipping non-folder entry '" + name + "' at dataset root");
    }
  }
  std::sort(classes.begin(), classes.end());

  for (const auto& label : classes) {
    std::size_t count = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / label)) {
      if (!entry.is_regular_file()) continue;
      const std::string name = entry.path().filename().string();
      if (name.starts_with('.')) continue;
      const std::string id = fs::relative(entry.path(), root).generic_string();
      if (!has_image_extension(entry.path())) {
        m.warnings.push_back("skipping non-image file '" + id + "'");
        continue;
      }
      m.records.push_back({id, entry.path(), label});
      ++count;
    }
    if (count == 0) m.warnings.push_back("class folder '" + label + "' contains no images");
    m.counts[label] = count;
  }
  if (m.records.empty()) throw IoError("dataset root '" + root.string() + "' contains no class images");

  std::sort(m.records.begin(), m.records.end(),
            [](const DatasetRecord& a, const DatasetRecord& b) { return a.id < b.id; });
  m.label_set = LabelSet(std::move(classes));
  return m;
}

/// Up to n records per class, chosen by ascending derive_seed(seed, id) so the
/// draw depends only on the seed and the ids. Output is sorted by id.
inline std::vector<DatasetRecord> sample_per_class(const DatasetManifest& manifest, std::size_t n,
                                                   std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample_per_class: n must be >= 1");
  std::map<std::string, std::vector<std::pair<std::uint64_t, const DatasetRecord*>>> by_class;
  for (const auto& r : manifest.records) by_class[r.true_label].emplace_back(derive_seed(seed, r.id), &r);

  std::vector<DatasetRecord> out;
  for (auto& [label, items] : by_class) {
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
    });
    const std::size_t take = std::min(n, items.size());
    for (std::size_t i = 0; i < take; ++i) out.push_back(*items[i].second);
  }
  std::sort(out.begin(), out.end(), [](const DatasetRecord& a, const DatasetRecord& b) { return a.id < b.id; });
  return out;
}

struct ClassShare {
  std::string label;
  std::size_t count = 0;
  double fraction = 0.0;
};

inline std::vector<ClassShare> dataset_stats(const std::map<std::string, std::size_t>& counts,
                                             const LabelSet& labels) {
  std::size_t total = 0;
  for (const auto& [label, c] : counts) total += c;
  if (total == 0) throw InvalidArgument("dataset_stats: empty dataset");
  std::vector<ClassShare> rows;
  for (const auto& label : labels.names()) {
    auto it = counts.find(label);
    const std::size_t c = it == counts.end() ? 0 : it->second;
    rows.push_back({label, c, static_cast<double>(c) / static_cast<double>(total)});
  }
  return rows;
}

inline std::vector<ClassShare> dataset_stats(const DatasetManifest& manifest) {
  return dataset_stats(manifest.counts, manifest.label_set);
}

// ---------------------------------------------------------------------------
// Prompt phrases

/// Human-readable tissue names for the nine Kather colon folder codes.
inline const std::map<std::string, std::string>& kather_phrases() {
  static const std::map<std::string, std::string> table = {
      {"ADI", "adipose tissue"},
      {"BACK", "background"},
      {"DEB", "debris"},
      {"LYM", "lymphocytes"},
      {"MUC", "mucus"},
      {"MUS", "smooth muscle"},
      {"NORM", "normal colon mucosa"},
      {"STR", "cancer-associated stroma"},
      {"TUM", "colorectal adenocarcinoma epithelium"},
  };
  return table;
}

/// Folder code -> prompt phrase: the Kather table when it knows the code,
/// otherwise the lowercased code with '_' and '-' read as spaces.
inline std::string prompt_phrase(const std::string& label) {
  const auto& table = kather_phrases();
  if (auto it = table.find(label); it != table.end()) return it->second;
  std::string phrase = label;
  for (char& c : phrase) {
    if (c == '_' || c == '-') c = ' ';
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return phrase;
}

inline std::vector<std::string> prompt_phrases(const LabelSet& labels) {
  std::vector<std::string> out;
  for (const auto& l : labels.names()) out.push_back(prompt_phrase(l));
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json label_set_to_json(const LabelSet& labels) { return labels.names(); }

inline LabelSet label_set_from_json(const nlohmann::json& j) {
  return LabelSet(j.get<std::vector<std::string>>());
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) {
    records.push_back({{"id", r.id}, {"path", r.path.generic_string()}, {"label", r.true_label}});
  }
  return {{"root", m.root.generic_string()},
          {"labels", label_set_to_json(m.label_set)},
          {"records", records},
          {"counts", m.counts}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.root = j.at("root").get<std::string>();
  m.label_set = label_set_from_json(j.at("labels"));
  for (const auto& r : j.at("records")) {
    DatasetRecord rec{r.at("id").get<std::string>(), r.at("path").get<std::string>(),
                      r.at("label").get<std::string>()};
    if (!m.label_set.contains(rec.true_label)) {
      throw InvalidArgument("manifest record '" + rec.id + "' has unknown label '" + rec.true_label + "'");
    }
    m.records.push_back(std::move(rec));
  }
  m.counts = j.at("counts").get<std::map<std::string, std::size_t>>();
  return m;
}

}  // namespace pathoattack
