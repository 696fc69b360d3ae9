#pragma once

// Detect -> crop -> embed -> retrieve -> assemble prompt -> generate.

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/concept_store.hpp"
#include "persona/perception.hpp"
#include "persona/retriever.hpp"

namespace persona {

struct PromptSegment {
  enum class Kind { kImageRef, kText };
  Kind kind = Kind::kText;
  std::string payload;

  friend bool operator==(const PromptSegment&, const PromptSegment&) = default;
};

struct AugmentedPrompt {
  std::vector<PromptSegment> segments;
  std::vector<std::string> concept_order;  // concept ids, injection order
};

// "<concept name=NAME>DESCRIPTION</concept>", or "<concept name=NAME/>" when
// the description is empty.
std::string concept_block(const ConceptRecord& record);

// One image_ref + text pair per concept, then the user image (as a data URI),
// then the user text. The user text is omitted when empty.
AugmentedPrompt assemble_prompt(const std::vector<ConceptRecord>& concepts,
                                const QueryInput& query);

// "Is NAME in the image? Answer with a single word."
std::string recognition_prompt(const std::string& concept_name);
// The NAME inside a recognition prompt, if text is one.
std::optional<std::string> parse_recognition_prompt(const std::string& text);

nlohmann::json prompt_to_json(const AugmentedPrompt& prompt);

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const AugmentedPrompt& prompt) = 0;
};

// Deterministic stand-in for a multimodal model.
//   "CAPTION: " + concept names in prompt order, ", "-separated;
//   recognition prompts add "\nANSWER: yes" / "\nANSWER: no";
//   other instructions add "\nNAME: DESCRIPTION" for every prompt concept the
//   instruction mentions by name.
class MockGenerator final : public Generator {
 public:
  explicit MockGenerator(NameDelimiters delimiters = {}) : delimiters_(std::move(delimiters)) {}
  std::string generate(const AugmentedPrompt& prompt) override;

 private:
  NameDelimiters delimiters_;
};

enum class GeneratorFlavor {
  kSegments,    // POST /generate {"segments": [...]} -> {"text": ...}
  kOpenAIChat,  // POST /v1/chat/completions, OpenAI-style messages
};

struct HttpGeneratorOptions {
  HttpEndpoint endpoint;
  GeneratorFlavor flavor = GeneratorFlavor::kSegments;
  std::string model = "default";
  // Concept image_refs that are relative paths resolve against this
  // directory and are inlined as data URIs for the chat flavor.
  std::optional<std::filesystem::path> image_root;
};

class HttpGenerator final : public Generator {
 public:
  explicit HttpGenerator(HttpGeneratorOptions options) : options_(std::move(options)) {}
  std::string generate(const AugmentedPrompt& prompt) override;

 private:
  HttpGeneratorOptions options_;
};

// Request bodies for both remote flavors; exposed for tests.
nlohmann::json segments_request(const AugmentedPrompt& prompt);
nlohmann::json openai_chat_request(const AugmentedPrompt& prompt, const std::string& model,
                                   const std::optional<std::filesystem::path>& image_root);

struct Provenance {
  enum class Source { kVisual, kName };
  std::string concept_id;
  std::optional<double> distance;  // absent for name-only hits
  Source source = Source::kVisual;
  std::optional<int> region_index;
};

struct StageTimings {
  double detect_ms = 0.0;
  double embed_ms = 0.0;
  double retrieve_ms = 0.0;
  double generate_ms = 0.0;
  double total_ms = 0.0;
};

struct GenerationOutcome {
  std::string text;
  std::vector<Provenance> provenance;
  AugmentedPrompt prompt;
  StageTimings timing;
  std::vector<std::string> warnings;
};

nlohmann::json outcome_to_json(const GenerationOutcome& outcome, bool with_timing = true);

struct PipelineOptions {
  RetrievalConfig retrieval;
  double score_threshold = kDefaultScoreThreshold;
  // Caps visual concepts below global_k; name hits always stay.
  std::optional<int> max_concepts;
  int generator_retries = 0;  // at most 2
  std::chrono::milliseconds retry_backoff{100};
};

class Pipeline {
 public:
  Pipeline(Detector& detector, Embedder& embedder, Generator& generator,
           PipelineOptions options = {});

  // Takes one snapshot of the store for the whole query.
  GenerationOutcome answer_query(const ConceptStore& store, const QueryInput& query);
  GenerationOutcome answer_query(const StoreSnapshot& snapshot,
                                 const NameDelimiters& delimiters, const QueryInput& query);

  // Visual half only: detection, crops, embeddings, pooled retrieval.
  std::vector<RetrievalHit> retrieve_visual(const StoreSnapshot& snapshot,
                                            const ImageInput& image,
                                            std::vector<std::string>* warnings = nullptr,
                                            StageTimings* timing = nullptr);

  const PipelineOptions& options() const { return options_; }

 private:
  std::string generate_with_retry(const AugmentedPrompt& prompt);

  Detector& detector_;
  Embedder& embedder_;
  Generator& generator_;
  PipelineOptions options_;
};

}  // namespace persona
