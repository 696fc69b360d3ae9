#include "persona/json_io.hpp"

#include <algorithm>
#include <limits>

namespace persona {

using nlohmann::json;

json embedding_to_json(const EmbeddingVector& embedding) {
  json out = json::array();
  for (Eigen::Index i = 0; i < embedding.size(); ++i) out.push_back(embedding(i));
  return out;
}

json to_json(const ConceptRecord& r, bool with_embedding) {
  json out = {{"id", r.id},
              {"name", r.name},
              {"category", r.category},
              {"description", r.description},
              {"image_ref", r.image_ref},
              {"created_at", r.created_at},
              {"updated_at", r.updated_at}};
  if (with_embedding) out["embedding"] = embedding_to_json(r.embedding);
  return out;
}

json to_json(const RetrievalHit& hit) {
  json out = {{"concept_id", hit.concept_id}, {"distance", hit.distance}};
  out["source_region"] = hit.source_region ? json(*hit.source_region) : json(nullptr);
  return out;
}

json to_json(const RegionOfInterest& region) {
  return {{"bbox", {region.bbox.x1, region.bbox.y1, region.bbox.x2, region.bbox.y2}},
          {"label", region.label},
          {"score", region.score}};
}

RegionOfInterest region_from_json(const json& j) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  RegionOfInterest region{{nan, nan, nan, nan}, "", nan};
  if (!j.is_object()) return region;
  if (auto it = j.find("bbox"); it != j.end() && it->is_array() && it->size() == 4 &&
                                std::all_of(it->begin(), it->end(),
                                            [](const json& v) { return v.is_number(); })) {
    region.bbox = {(*it)[0].get<double>(), (*it)[1].get<double>(), (*it)[2].get<double>(),
                   (*it)[3].get<double>()};
  }
  if (auto it = j.find("label"); it != j.end() && it->is_string()) {
    region.label = it->get<std::string>();
  }
  if (auto it = j.find("score"); it != j.end() && it->is_number()) {
    region.score = it->get<double>();
  }
  return region;
}

EmbeddingVector embedding_from_json(const json& j) {
  if (!j.is_array() || j.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "embedding must be a non-empty array");
  }
  EmbeddingVector out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw Error(ErrorCode::kInvalidArgument, "embedding entries must be numbers");
    }
    out(static_cast<Eigen::Index>(i)) = j[i].get<float>();
  }
  check_embedding(out);
  return out;
}

}  // namespace persona
