#include "persona/retriever.hpp"

#include <algorithm>
#include <map>
#include <unordered_set>

namespace persona {

bool hit_before(const RetrievalHit& a, const RetrievalHit& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.concept_id < b.concept_id;
}

std::vector<RetrievalHit> knn(const StoreSnapshot& snapshot,
                              const EmbeddingVector& query, int k,
                              DistanceMode mode) {
  if (k < 1) {
    throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  }
  if (query.size() != snapshot.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query dim " + std::to_string(query.size()) + " vs store dim " +
                    std::to_string(snapshot.dim()));
  }
  check_embedding(query);
  const auto& rows = snapshot.matrix();
  const auto& records = snapshot.records();
  std::vector<RetrievalHit> hits;
  hits.reserve(records.size());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    hits.push_back({records[static_cast<std::size_t>(i)].id,
                    distance(rows.row(i), query, mode), std::nullopt});
  }
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep),
                    hits.end(), hit_before);
  hits.resize(keep);
  return hits;
}

std::vector<RetrievalHit> retrieve_for_regions(
    const StoreSnapshot& snapshot, const std::vector<EmbeddingVector>& regions,
    const RetrievalConfig& config) {
  if (config.per_region_k < 1 || config.global_k < 1) {
    throw Error(ErrorCode::kInvalidArgument, "per_region_k and global_k must be >= 1");
  }
  std::map<std::string, RetrievalHit> pooled;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    for (auto& hit : knn(snapshot, regions[r], config.per_region_k, config.distance_mode)) {
      hit.source_region = static_cast<int>(r);
      auto [it, inserted] = pooled.emplace(hit.concept_id, hit);
      // Earlier region wins an exact tie.
      if (!inserted && hit.distance < it->second.distance) it->second = hit;
    }
  }
  std::vector<RetrievalHit> out;
  out.reserve(pooled.size());
  for (auto& [id, hit] : pooled) {
    if (config.max_distance && hit.distance > *config.max_distance) continue;
    out.push_back(std::move(hit));
  }
  std::sort(out.begin(), out.end(), hit_before);
  if (out.size() > static_cast<std::size_t>(config.global_k)) {
    out.resize(static_cast<std::size_t>(config.global_k));
  }
  return out;
}

std::vector<std::string> scan_name_tokens(std::string_view text,
                                          const NameDelimiters& delimiters) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find(delimiters.open, pos);
    if (open == std::string_view::npos) break;
    const auto inner = open + delimiters.open.size();
    const auto close = text.find(delimiters.close, inner);
    if (close == std::string_view::npos) break;
    // A second opener before the closer restarts the token there.
    const auto reopen = text.find(delimiters.open, inner);
    if (reopen != std::string_view::npos && reopen < close) {
      pos = reopen;
      continue;
    }
    if (close > inner) {
      tokens.emplace_back(text.substr(open, close + delimiters.close.size() - open));
    }
    pos = close + delimiters.close.size();
  }
  return tokens;
}

std::vector<ConceptRecord> retrieve_by_names(const StoreSnapshot& snapshot,
                                             std::string_view text,
                                             const NameDelimiters& delimiters) {
  std::vector<ConceptRecord> out;
  std::unordered_set<std::string> seen;
  for (const auto& token : scan_name_tokens(text, delimiters)) {
    if (const ConceptRecord* record = snapshot.find_by_name(token);
        record && seen.insert(record->id).second) {
      out.push_back(*record);
    }
  }
  return out;
}

}  // namespace persona
