#include "persona/perception.hpp"

#include <algorithm>
#include <cmath>

#include "persona/json_io.hpp"
#include "persona/util.hpp"

namespace persona {

using nlohmann::json;

Detections detect(Detector& detector, const ImageInput& image,
                  const std::vector<std::string>& classes, double score_threshold) {
  if (classes.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "detect needs at least one class");
  }
  decode_image(image.bytes);

  Detections out;
  for (auto& region : detector.propose(image, classes)) {
    const bool score_ok = std::isfinite(region.score) && region.score >= 0.0 &&
                          region.score <= 1.0;
    if (!is_valid_bbox(region.bbox) || !score_ok) {
      out.warnings.push_back("dropped invalid region (label '" + region.label + "')");
      continue;
    }
    if (region.score < score_threshold) continue;
    out.regions.push_back(std::move(region));
  }
  std::stable_sort(out.regions.begin(), out.regions.end(),
                   [](const RegionOfInterest& a, const RegionOfInterest& b) {
                     return a.score > b.score;
                   });
  return out;
}

EmbeddingVector embed_image(Embedder& embedder, const std::string& image_bytes,
                            int expected_dim) {
  EmbeddingVector v = embedder.encode(image_bytes);
  if (v.size() != expected_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "embedder returned dim " + std::to_string(v.size()) + ", expected " +
                    std::to_string(expected_dim));
  }
  check_embedding(v);
  return v;
}

FixtureSet FixtureSet::parse(const std::string& json_text) {
  FixtureSet set;
  try {
    const json doc = json::parse(json_text);
    for (const auto& [key, value] : doc.items()) {
      Entry entry;
      if (value.contains("regions")) {
        std::vector<RegionOfInterest> regions;
        for (const auto& r : value.at("regions")) regions.push_back(region_from_json(r));
        entry.regions = std::move(regions);
      }
      if (value.contains("embedding")) {
        entry.embedding = embedding_from_json(value.at("embedding"));
      }
      set.entries_.emplace(key, std::move(entry));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed fixture file: ") + e.what());
  }
  return set;
}

FixtureSet FixtureSet::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

std::string FixtureSet::to_json() const {
  json doc = json::object();
  for (const auto& [key, entry] : entries_) {
    json value = json::object();
    if (entry.regions) {
      value["regions"] = json::array();
      for (const auto& r : *entry.regions) value["regions"].push_back(persona::to_json(r));
    }
    if (entry.embedding) value["embedding"] = embedding_to_json(*entry.embedding);
    doc[key] = std::move(value);
  }
  return doc.dump(1);
}

void FixtureSet::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json());
}

void FixtureSet::set_regions(const std::string& image_bytes,
                             std::vector<RegionOfInterest> regions) {
  entries_[sha256_hex(image_bytes)].regions = std::move(regions);
}

void FixtureSet::set_embedding(const std::string& image_bytes, EmbeddingVector embedding) {
  entries_[sha256_hex(image_bytes)].embedding = std::move(embedding);
}

const std::vector<RegionOfInterest>* FixtureSet::regions_for(const std::string& sha256) const {
  auto it = entries_.find(sha256);
  return it != entries_.end() && it->second.regions ? &*it->second.regions : nullptr;
}

const EmbeddingVector* FixtureSet::embedding_for(const std::string& sha256) const {
  auto it = entries_.find(sha256);
  return it != entries_.end() && it->second.embedding ? &*it->second.embedding : nullptr;
}

std::vector<RegionOfInterest> WholeImageDetector::propose(const ImageInput&,
                                                          const std::vector<std::string>&) {
  return {{{0.0, 0.0, 1.0, 1.0}, "object", 1.0}};
}

std::vector<RegionOfInterest> FixtureDetector::propose(const ImageInput& image,
                                                       const std::vector<std::string>&) {
  const auto* regions = fixtures_->regions_for(sha256_hex(image.bytes));
  return regions ? *regions : std::vector<RegionOfInterest>{};
}

EmbeddingVector HashEmbedder::encode(const std::string& image_bytes) {
  const std::string digest = sha256_hex(image_bytes);
  std::uint64_t state = std::stoull(digest.substr(0, 16), nullptr, 16) ^ seed_;
  EmbeddingVector out(dim_);
  for (int i = 0; i < dim_; ++i) {
    // splitmix64
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    const double unit = static_cast<double>(z >> 11) * 0x1.0p-53;
    out(i) = static_cast<float>(2.0 * unit - 1.0);
  }
  return out;
}

EmbeddingVector LookupEmbedder::encode(const std::string& image_bytes) {
  const std::string key = sha256_hex(image_bytes);
  const auto* e = fixtures_->embedding_for(key);
  if (!e) {
    throw Error(ErrorCode::kBackendUnavailable, "no fixture embedding for image " + key);
  }
  return *e;
}

}  // namespace persona
