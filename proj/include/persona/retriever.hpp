#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "persona/concept_store.hpp"
#include "persona/embedding.hpp"

namespace persona {

struct RetrievalHit {
  std::string concept_id;
  double distance = 0.0;
  std::optional<int> source_region;
};

struct RetrievalConfig {
  int per_region_k = 2;
  int global_k = 2;
  DistanceMode distance_mode = DistanceMode::kEuclidean;
  std::optional<double> max_distance;
};

// Ordering used everywhere: ascending distance, then ascending concept id.
bool hit_before(const RetrievalHit& a, const RetrievalHit& b);

// Exact scan of the snapshot. Returns min(k, size) hits.
std::vector<RetrievalHit> knn(const StoreSnapshot& snapshot,
                              const EmbeddingVector& query, int k,
                              DistanceMode mode = DistanceMode::kEuclidean);

// Per-region top per_region_k, pooled by concept with each concept's minimum
// distance (and the region that achieved it), truncated to global_k.
std::vector<RetrievalHit> retrieve_for_regions(
    const StoreSnapshot& snapshot, const std::vector<EmbeddingVector>& regions,
    const RetrievalConfig& config);

// Delimiter-wrapped tokens in text order, repeats kept.
std::vector<std::string> scan_name_tokens(std::string_view text,
                                          const NameDelimiters& delimiters);

// Stored concepts mentioned in text, first-mention order, no repeats.
std::vector<ConceptRecord> retrieve_by_names(const StoreSnapshot& snapshot,
                                             std::string_view text,
                                             const NameDelimiters& delimiters);

}  // namespace persona
