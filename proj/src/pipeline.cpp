#include "persona/pipeline.hpp"

#include <algorithm>
#include <set>
#include <thread>
#include <unordered_map>

#include "persona/util.hpp"

namespace persona {

using nlohmann::json;

namespace {

constexpr std::string_view kBlockOpen = "<concept name=";
constexpr std::string_view kBlockClose = "</concept>";
constexpr std::string_view kRecognitionHead = "Is ";
constexpr std::string_view kRecognitionTail = " in the image? Answer with a single word.";

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

struct ParsedBlock {
  std::string name;
  std::string description;
};

std::optional<ParsedBlock> parse_concept_block(const std::string& text,
                                               const NameDelimiters& delimiters) {
  if (!text.starts_with(kBlockOpen)) return std::nullopt;
  const auto name_begin = kBlockOpen.size();
  const auto close = text.find(delimiters.close, name_begin);
  if (close == std::string::npos) return std::nullopt;
  const auto name_end = close + delimiters.close.size();
  ParsedBlock block{text.substr(name_begin, name_end - name_begin), {}};
  if (text.compare(name_end, std::string::npos, "/>") == 0) return block;
  if (name_end >= text.size() || text[name_end] != '>' || !text.ends_with(kBlockClose)) {
    return std::nullopt;
  }
  block.description =
      text.substr(name_end + 1, text.size() - kBlockClose.size() - name_end - 1);
  return block;
}

std::string_view kind_name(PromptSegment::Kind kind) {
  return kind == PromptSegment::Kind::kImageRef ? "image_ref" : "text";
}

}  // namespace

std::string concept_block(const ConceptRecord& record) {
  std::string out(kBlockOpen);
  out += record.name;
  if (record.description.empty()) {
    out += "/>";
  } else {
    out += '>';
    out += record.description;
    out += kBlockClose;
  }
  return out;
}

AugmentedPrompt assemble_prompt(const std::vector<ConceptRecord>& concepts,
                                const QueryInput& query) {
  AugmentedPrompt prompt;
  for (const auto& record : concepts) {
    prompt.segments.push_back({PromptSegment::Kind::kImageRef, record.image_ref});
    prompt.segments.push_back({PromptSegment::Kind::kText, concept_block(record)});
    prompt.concept_order.push_back(record.id);
  }
  if (query.image) {
    prompt.segments.push_back(
        {PromptSegment::Kind::kImageRef,
         "data:" + query.image->media_type + ";base64," + base64_encode(query.image->bytes)});
  }
  if (!query.text.empty()) {
    prompt.segments.push_back({PromptSegment::Kind::kText, query.text});
  }
  return prompt;
}

std::string recognition_prompt(const std::string& concept_name) {
  if (concept_name.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "recognition prompt needs a concept name");
  }
  return std::string(kRecognitionHead) + concept_name + std::string(kRecognitionTail);
}

std::optional<std::string> parse_recognition_prompt(const std::string& text) {
  if (!text.starts_with(kRecognitionHead) || !text.ends_with(kRecognitionTail) ||
      text.size() <= kRecognitionHead.size() + kRecognitionTail.size()) {
    return std::nullopt;
  }
  return text.substr(kRecognitionHead.size(),
                     text.size() - kRecognitionHead.size() - kRecognitionTail.size());
}

json prompt_to_json(const AugmentedPrompt& prompt) {
  json segments = json::array();
  for (const auto& s : prompt.segments) {
    segments.push_back({{"kind", kind_name(s.kind)}, {"payload", s.payload}});
  }
  return {{"segments", std::move(segments)}, {"concept_order", prompt.concept_order}};
}

std::string MockGenerator::generate(const AugmentedPrompt& prompt) {
  std::vector<ParsedBlock> blocks;
  std::string instruction;
  for (const auto& s : prompt.segments) {
    if (s.kind != PromptSegment::Kind::kText) continue;
    if (auto block = parse_concept_block(s.payload, delimiters_)) {
      blocks.push_back(std::move(*block));
    } else {
      instruction = s.payload;
    }
  }

  std::string reply = "CAPTION: ";
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i > 0) reply += ", ";
    reply += blocks[i].name;
  }
  if (auto asked = parse_recognition_prompt(instruction)) {
    const bool present = std::any_of(blocks.begin(), blocks.end(),
                                     [&](const ParsedBlock& b) { return b.name == *asked; });
    reply += present ? "\nANSWER: yes" : "\nANSWER: no";
    return reply;
  }
  for (const auto& b : blocks) {
    if (instruction.find(b.name) != std::string::npos) {
      reply += "\n" + b.name + ": " + b.description;
    }
  }
  return reply;
}

json outcome_to_json(const GenerationOutcome& outcome, bool with_timing) {
  json provenance = json::array();
  for (const auto& p : outcome.provenance) {
    json entry = {{"concept_id", p.concept_id},
                  {"source", p.source == Provenance::Source::kVisual ? "visual" : "name"}};
    entry["distance"] = p.distance ? json(*p.distance) : json(nullptr);
    entry["region_index"] = p.region_index ? json(*p.region_index) : json(nullptr);
    provenance.push_back(std::move(entry));
  }
  json out = {{"text", outcome.text},
              {"provenance", std::move(provenance)},
              {"prompt", prompt_to_json(outcome.prompt)},
              {"warnings", outcome.warnings}};
  if (with_timing) {
    out["timing"] = {{"detect_ms", outcome.timing.detect_ms},
                     {"embed_ms", outcome.timing.embed_ms},
                     {"retrieve_ms", outcome.timing.retrieve_ms},
                     {"generate_ms", outcome.timing.generate_ms},
                     {"total_ms", outcome.timing.total_ms}};
  }
  return out;
}

Pipeline::Pipeline(Detector& detector, Embedder& embedder, Generator& generator,
                   PipelineOptions options)
    : detector_(detector), embedder_(embedder), generator_(generator),
      options_(std::move(options)) {
  if (options_.generator_retries < 0 || options_.generator_retries > 2) {
    throw Error(ErrorCode::kInvalidArgument, "generator_retries must be in [0, 2]");
  }
}

GenerationOutcome Pipeline::answer_query(const ConceptStore& store, const QueryInput& query) {
  const SnapshotPtr snapshot = store.snapshot();
  return answer_query(*snapshot, store.delimiters(), query);
}

std::vector<RetrievalHit> Pipeline::retrieve_visual(const StoreSnapshot& snapshot,
                                                    const ImageInput& image,
                                                    std::vector<std::string>* warnings,
                                                    StageTimings* timing) {
  StageTimings local;
  StageTimings& t = timing ? *timing : local;
  if (snapshot.empty()) return {};

  std::set<std::string> categories;
  for (const auto& r : snapshot.records()) categories.insert(r.category);

  auto started = Clock::now();
  Detections detections;
  try {
    detections = detect(detector_, image, {categories.begin(), categories.end()},
                        options_.score_threshold);
  } catch (const Error& e) {
    throw e.with_stage("detect");
  }
  t.detect_ms = elapsed_ms(started);
  if (warnings) {
    warnings->insert(warnings->end(), detections.warnings.begin(), detections.warnings.end());
  }

  started = Clock::now();
  std::vector<EmbeddingVector> region_embeddings;
  region_embeddings.reserve(detections.regions.size());
  try {
    const Image decoded = decode_image(image.bytes);
    for (const auto& region : detections.regions) {
      // A full-frame region is the image itself; skip the re-encode so the
      // embedder sees the caller's bytes.
      const bool whole = region.bbox == BBox{};
      region_embeddings.push_back(embed_image(
          embedder_, whole ? image.bytes : encode_png(crop(decoded, region.bbox)), snapshot.dim()));
    }
  } catch (const Error& e) {
    throw e.with_stage("embed");
  }
  t.embed_ms = elapsed_ms(started);

  started = Clock::now();
  RetrievalConfig config = options_.retrieval;
  if (options_.max_concepts) config.global_k = std::min(config.global_k, *options_.max_concepts);
  auto hits = retrieve_for_regions(snapshot, region_embeddings, config);
  t.retrieve_ms = elapsed_ms(started);
  return hits;
}

GenerationOutcome Pipeline::answer_query(const StoreSnapshot& snapshot,
                                         const NameDelimiters& delimiters,
                                         const QueryInput& query) {
  if (!query.image && query.text.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "query needs an image or text");
  }
  const auto started = Clock::now();
  GenerationOutcome outcome;

  std::vector<RetrievalHit> visual;
  if (query.image) {
    visual = retrieve_visual(snapshot, *query.image, &outcome.warnings, &outcome.timing);
  }

  const auto name_started = Clock::now();
  const auto named = retrieve_by_names(snapshot, query.text, delimiters);

  std::vector<ConceptRecord> concepts;
  std::unordered_map<std::string, std::size_t> position;
  for (const auto& hit : visual) {
    position.emplace(hit.concept_id, concepts.size());
    concepts.push_back(*snapshot.find_by_id(hit.concept_id));
    outcome.provenance.push_back(
        {hit.concept_id, hit.distance, Provenance::Source::kVisual, hit.source_region});
  }
  for (const auto& record : named) {
    if (auto it = position.find(record.id); it != position.end()) {
      outcome.provenance[it->second].source = Provenance::Source::kName;
      continue;
    }
    concepts.push_back(record);
    outcome.provenance.push_back({record.id, std::nullopt, Provenance::Source::kName, {}});
  }
  outcome.prompt = assemble_prompt(concepts, query);
  outcome.timing.retrieve_ms += elapsed_ms(name_started);

  const auto gen_started = Clock::now();
  try {
    outcome.text = generate_with_retry(outcome.prompt);
  } catch (const Error& e) {
    throw e.with_stage("generate");
  }
  outcome.timing.generate_ms = elapsed_ms(gen_started);
  outcome.timing.total_ms = elapsed_ms(started);
  return outcome;
}

std::string Pipeline::generate_with_retry(const AugmentedPrompt& prompt) {
  for (int attempt = 0;; ++attempt) {
    try {
      return generator_.generate(prompt);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBackendUnavailable || attempt >= options_.generator_retries) {
        throw;
      }
      std::this_thread::sleep_for(options_.retry_backoff * (1 << attempt));
    }
  }
}

}  // namespace persona
