#pragma once

// Training-record synthesis from a box-annotated image corpus: crops,
// geometric augmentation, template instantiation, and noise-concept
// injection for negative samples.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/image.hpp"
#include "persona/pipeline.hpp"

namespace persona {

struct AnnotatedBox {
  BBox bbox;
  std::string concept_name;
  std::string category;
};

struct AnnotatedSample {
  std::string image_ref;
  std::vector<AnnotatedBox> boxes;
  std::optional<std::string> caption;
};

// One JSON object per line. Invalid boxes or empty names raise InvalidArgument
// with the offending line number.
std::vector<AnnotatedSample> parse_corpus(const std::string& jsonl);
nlohmann::json to_json(const AnnotatedSample& sample);

enum class TaskKind { kGrounding, kRecognition, kCaption, kDescription, kQa };
std::string_view to_string(TaskKind task);

struct TrainingRecord {
  TaskKind task = TaskKind::kCaption;
  std::vector<PromptSegment> inputs;
  std::string target;
  std::vector<std::string> negatives_injected;

  friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

nlohmann::json to_json(const TrainingRecord& record);
// Compact, key-ordered, newline-free.
std::string to_jsonl_line(const TrainingRecord& record);

// "[x1, y1, x2, y2]" with two decimals.
std::string format_bbox(const BBox& box);
// Type invariants of a record: bbox format for grounding targets, and no
// injected negative named in the target. Returns the first violation.
std::optional<std::string> validate_record(const TrainingRecord& record);

// Instruction templates and answer phrase banks. Placeholders are ⟨V⟩, ⟨H⟩,
// ⟨O⟩, ⟨C1⟩ and ⟨C2⟩.
struct TemplateBank {
  std::vector<std::string> recognition;
  std::vector<std::string> grounding;
  std::vector<std::string> caption;
  std::vector<std::string> description;
  std::vector<std::string> qa_person;
  std::vector<std::string> qa_object;
  std::vector<std::string> qa_multi;
  std::vector<std::string> answer_positive;
  std::vector<std::string> answer_negative;
  std::vector<std::string> person_categories;

  static TemplateBank parse(const std::string& json_text);
  static TemplateBank load(const std::filesystem::path& path);
  // data/templates.json from the source tree.
  static TemplateBank load_default();
};

std::string substitute(std::string text, std::string_view placeholder,
                       const std::string& value);

enum class AugmentOp { kFlipH, kFlipV, kRot90, kRot180, kRot270 };
std::string_view to_string(AugmentOp op);

struct AugmentedVariant {
  std::vector<AugmentOp> ops;
  Image image;
};

Image apply_ops(const Image& image, const std::vector<AugmentOp>& ops);

// `count` variants, each a seeded sequence of one or two ops drawn from
// `ops`. Same seed, same variants.
std::vector<AugmentedVariant> augment(const Image& crop, const std::vector<AugmentOp>& ops,
                                      std::uint64_t seed, int count = 1);

using ImageLoader = std::function<std::string(const std::string& image_ref)>;
ImageLoader directory_loader(std::filesystem::path root);

std::vector<std::pair<std::string, Image>> make_crops(const AnnotatedSample& sample,
                                                      const ImageLoader& loader);

// A concept as it appears in a record's inputs.
struct ConceptRef {
  std::string name;
  std::string image_ref;
  std::string description;
};

class Annotator {
 public:
  virtual ~Annotator() = default;
  // Target text for a caption/description/qa instruction on a sample.
  virtual std::string annotate(TaskKind task, const AnnotatedSample& sample,
                               const std::string& instruction) = 0;
  // Free-text info for a concept; empty when none is known.
  virtual std::string describe(const std::string& concept_name) = 0;
};

// {"concepts": {name: info},
//  "caption": {image_ref: text}, "description": {image_ref: text},
//  "qa": {image_ref: text | {question: answer}}}
// Missing caption/description/qa entries raise AnnotatorUnavailable, except
// that captions fall back to the sample's own ground-truth caption.
class FileAnnotator final : public Annotator {
 public:
  static FileAnnotator parse(const std::string& json_text);
  static FileAnnotator load(const std::filesystem::path& path);
  std::string annotate(TaskKind task, const AnnotatedSample& sample,
                       const std::string& instruction) override;
  std::string describe(const std::string& concept_name) override;

 private:
  nlohmann::json doc_;
};

// Placeholder for an LLM-backed annotator; always AnnotatorUnavailable.
class UnconfiguredAnnotator final : public Annotator {
 public:
  std::string annotate(TaskKind, const AnnotatedSample&, const std::string&) override;
  std::string describe(const std::string&) override;
};

enum class Polarity { kPositive, kNegative };

// Record constructors. Each call draws from the builder's seeded stream, so
// two builders with equal seeds produce equal records for equal calls.
class RecordBuilder {
 public:
  RecordBuilder(const TemplateBank& bank, std::uint64_t seed) : bank_(bank), rng_(seed) {}

  TrainingRecord grounding(const AnnotatedSample& sample, std::size_t box_index,
                           const ConceptRef& concept_ref);
  TrainingRecord recognition(const AnnotatedSample& sample, const ConceptRef& concept_ref,
                             Polarity polarity);
  TrainingRecord instruction(const AnnotatedSample& sample, TaskKind task,
                             const std::vector<ConceptRef>& concepts, Annotator& annotator);
  TrainingRecord inject_negatives(const TrainingRecord& record,
                                  const std::vector<ConceptRef>& noise, std::size_t count);

  std::mt19937_64& rng() { return rng_; }

 private:
  const std::string& pick(const std::vector<std::string>& bank);

  const TemplateBank& bank_;
  std::mt19937_64 rng_;
};

// Table-style mix of the four task families.
struct TaskMix {
  double grounding = 100.0;
  double recognition = 40.0;
  double caption_description = 37.0;
  double qa = 16.0;
};

struct DatagenConfig {
  std::size_t records = 1000;
  std::uint64_t seed = 0;
  TaskMix mix;
  bool augment = true;
  std::vector<AugmentOp> augment_ops = {AugmentOp::kFlipH, AugmentOp::kFlipV,
                                        AugmentOp::kRot90, AugmentOp::kRot180,
                                        AugmentOp::kRot270};
  // Share of records that receive noise concepts.
  double negative_ratio = 0.3;
  std::size_t negatives_per_record = 1;
};

// Largest-remainder apportionment of `total` across the mix, in the order
// grounding, recognition, caption+description, qa.
std::array<std::size_t, 4> apportion(const TaskMix& mix, std::size_t total);

struct GeneratedDataset {
  std::vector<TrainingRecord> records;
  // Pre-injection record for entries that received negatives.
  std::vector<std::optional<TrainingRecord>> sources;
  // Crop image refs -> PNG bytes, for every crop referenced by a record.
  std::map<std::string, std::string> crops;
  std::map<std::string, std::size_t> stats;
};

GeneratedDataset generate_dataset(const std::vector<AnnotatedSample>& corpus,
                                  const ImageLoader& loader, Annotator& annotator,
                                  const TemplateBank& bank, const DatagenConfig& config);

// records.jsonl, stats.json and crops/ under dir.
void write_dataset(const GeneratedDataset& dataset, const std::filesystem::path& dir);

}  // namespace persona
