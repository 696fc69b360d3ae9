#pragma once

// JSON forms of the public types, shared by the service, the CLI, and the
// file formats.

#include <json.hpp>

#include "persona/concept_store.hpp"
#include "persona/perception.hpp"
#include "persona/retriever.hpp"

namespace persona {

nlohmann::json to_json(const ConceptRecord& record, bool with_embedding = false);
nlohmann::json to_json(const RetrievalHit& hit);
nlohmann::json to_json(const RegionOfInterest& region);
nlohmann::json embedding_to_json(const EmbeddingVector& embedding);

// Lenient: a bbox that is not four numbers becomes NaNs so the validation
// layer rejects it. Missing label/score fall back to "" / NaN.
RegionOfInterest region_from_json(const nlohmann::json& j);

// Throws InvalidArgument when j is not an array of finite numbers.
EmbeddingVector embedding_from_json(const nlohmann::json& j);

}  // namespace persona
