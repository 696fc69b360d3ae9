#include "persona/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>

#include "persona/util.hpp"

namespace persona {

using nlohmann::json;

namespace {

// Portable draws: std distributions differ across standard libraries.
std::size_t draw(std::mt19937_64& rng, std::size_t n) { return rng() % n; }
double draw_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::string> string_list(const json& doc, const char* key) {
  if (!doc.contains(key)) return {};
  return doc.at(key).get<std::vector<std::string>>();
}

bool sample_has(const AnnotatedSample& sample, const std::string& name) {
  return std::any_of(sample.boxes.begin(), sample.boxes.end(),
                     [&](const AnnotatedBox& b) { return b.concept_name == name; });
}

void push_concept(std::vector<PromptSegment>& inputs, const ConceptRef& ref) {
  inputs.push_back({PromptSegment::Kind::kImageRef, ref.image_ref});
  ConceptRecord record;
  record.name = ref.name;
  record.description = ref.description;
  inputs.push_back({PromptSegment::Kind::kText, concept_block(record)});
}

void push_query(std::vector<PromptSegment>& inputs, const AnnotatedSample& sample,
                const std::string& instruction) {
  inputs.push_back({PromptSegment::Kind::kImageRef, sample.image_ref});
  inputs.push_back({PromptSegment::Kind::kText, instruction});
}

// Leading (image_ref, concept block) pairs in a record's inputs.
std::size_t concept_pairs(const std::vector<PromptSegment>& inputs) {
  std::size_t pairs = 0;
  while (2 * pairs + 1 < inputs.size() &&
         inputs[2 * pairs].kind == PromptSegment::Kind::kImageRef &&
         inputs[2 * pairs + 1].kind == PromptSegment::Kind::kText &&
         inputs[2 * pairs + 1].payload.starts_with("<concept name=")) {
    ++pairs;
  }
  return pairs;
}

bool inputs_mention(const std::vector<PromptSegment>& inputs, const std::string& name) {
  const std::string needle = "<concept name=" + name;
  return std::any_of(inputs.begin(), inputs.end(), [&](const PromptSegment& s) {
    return s.kind == PromptSegment::Kind::kText && s.payload.starts_with(needle);
  });
}

}  // namespace

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::kGrounding: return "grounding";
    case TaskKind::kRecognition: return "recognition";
    case TaskKind::kCaption: return "caption";
    case TaskKind::kDescription: return "description";
    case TaskKind::kQa: return "qa";
  }
  return "unknown";
}

std::string_view to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::kFlipH: return "flip_h";
    case AugmentOp::kFlipV: return "flip_v";
    case AugmentOp::kRot90: return "rot90";
    case AugmentOp::kRot180: return "rot180";
    case AugmentOp::kRot270: return "rot270";
  }
  return "unknown";
}

std::vector<AnnotatedSample> parse_corpus(const std::string& jsonl) {
  std::vector<AnnotatedSample> out;
  std::istringstream lines(jsonl);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fail = [&](const std::string& why) {
      return Error(ErrorCode::kInvalidArgument,
                   "corpus line " + std::to_string(lineno) + ": " + why);
    };
    try {
      const json j = json::parse(line);
      AnnotatedSample sample;
      sample.image_ref = j.at("image_ref").get<std::string>();
      if (j.contains("caption") && j["caption"].is_string()) {
        sample.caption = j["caption"].get<std::string>();
      }
      for (const auto& b : j.at("boxes")) {
        const auto coords = b.at("bbox").get<std::vector<double>>();
        if (coords.size() != 4) throw fail("bbox needs four numbers");
        AnnotatedBox box{{coords[0], coords[1], coords[2], coords[3]},
                         b.at("concept_name").get<std::string>(),
                         b.value("category", std::string{})};
        if (!is_valid_bbox(box.bbox)) throw fail("invalid bbox");
        if (box.concept_name.empty()) throw fail("empty concept_name");
        sample.boxes.push_back(std::move(box));
      }
      out.push_back(std::move(sample));
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  return out;
}

json to_json(const AnnotatedSample& sample) {
  json boxes = json::array();
  for (const auto& b : sample.boxes) {
    boxes.push_back({{"bbox", {b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2}},
                     {"concept_name", b.concept_name},
                     {"category", b.category}});
  }
  json out = {{"image_ref", sample.image_ref}, {"boxes", std::move(boxes)}};
  if (sample.caption) out["caption"] = *sample.caption;
  return out;
}

json to_json(const TrainingRecord& record) {
  json inputs = json::array();
  for (const auto& s : record.inputs) {
    inputs.push_back({{"kind", s.kind == PromptSegment::Kind::kImageRef ? "image_ref" : "text"},
                      {"payload", s.payload}});
  }
  return {{"task", to_string(record.task)},
          {"inputs", std::move(inputs)},
          {"target", record.target},
          {"negatives_injected", record.negatives_injected}};
}

std::string to_jsonl_line(const TrainingRecord& record) { return to_json(record).dump(); }

std::string format_bbox(const BBox& box) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "[%.2f, %.2f, %.2f, %.2f]", box.x1, box.y1, box.x2, box.y2);
  return buf;
}

std::optional<std::string> validate_record(const TrainingRecord& record) {
  static const std::regex kBoxPattern(
      R"(^\[\d+\.\d{2}, \d+\.\d{2}, \d+\.\d{2}, \d+\.\d{2}\]$)");
  if (record.task == TaskKind::kGrounding && !std::regex_match(record.target, kBoxPattern)) {
    return "grounding target is not a two-decimal bbox: " + record.target;
  }
  for (const auto& name : record.negatives_injected) {
    if (record.target.find(name) != std::string::npos) {
      return "injected negative " + name + " appears in target";
    }
  }
  return std::nullopt;
}

TemplateBank TemplateBank::parse(const std::string& json_text) {
  TemplateBank bank;
  try {
    const json doc = json::parse(json_text);
    bank.recognition = string_list(doc, "recognition");
    bank.grounding = string_list(doc, "grounding");
    bank.caption = string_list(doc, "caption");
    bank.description = string_list(doc, "description");
    bank.qa_person = string_list(doc, "qa_person");
    bank.qa_object = string_list(doc, "qa_object");
    bank.qa_multi = string_list(doc, "qa_multi");
    bank.answer_positive = string_list(doc, "answer_positive");
    bank.answer_negative = string_list(doc, "answer_negative");
    bank.person_categories = string_list(doc, "person_categories");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed template bank: ") + e.what());
  }
  for (const auto* list : {&bank.recognition, &bank.grounding, &bank.caption, &bank.description,
                           &bank.qa_person, &bank.qa_object, &bank.answer_positive,
                           &bank.answer_negative}) {
    if (list->empty()) {
      throw Error(ErrorCode::kInvalidArgument, "template bank is missing a required list");
    }
  }
  return bank;
}

TemplateBank TemplateBank::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

TemplateBank TemplateBank::load_default() {
  return load(std::filesystem::path(PERSONA_DATA_DIR) / "templates.json");
}

std::string substitute(std::string text, std::string_view placeholder,
                       const std::string& value) {
  for (auto pos = text.find(placeholder); pos != std::string::npos;
       pos = text.find(placeholder, pos + value.size())) {
    text.replace(pos, placeholder.size(), value);
  }
  return text;
}

Image apply_ops(const Image& image, const std::vector<AugmentOp>& ops) {
  Image out = image;
  for (AugmentOp op : ops) {
    switch (op) {
      case AugmentOp::kFlipH: out = flip_horizontal(out); break;
      case AugmentOp::kFlipV: out = flip_vertical(out); break;
      case AugmentOp::kRot90: out = rotate90(out); break;
      case AugmentOp::kRot180: out = rotate180(out); break;
      case AugmentOp::kRot270: out = rotate270(out); break;
    }
  }
  return out;
}

std::vector<AugmentedVariant> augment(const Image& crop, const std::vector<AugmentOp>& ops,
                                      std::uint64_t seed, int count) {
  if (ops.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "augment needs at least one op");
  }
  std::mt19937_64 rng(seed);
  std::vector<AugmentedVariant> out;
  for (int i = 0; i < count; ++i) {
    AugmentedVariant v;
    const std::size_t length = 1 + draw(rng, 2);
    for (std::size_t j = 0; j < length; ++j) v.ops.push_back(ops[draw(rng, ops.size())]);
    v.image = apply_ops(crop, v.ops);
    out.push_back(std::move(v));
  }
  return out;
}

ImageLoader directory_loader(std::filesystem::path root) {
  return [root = std::move(root)](const std::string& ref) {
    const std::filesystem::path p(ref);
    return read_file(p.is_absolute() ? p : root / p);
  };
}

std::vector<std::pair<std::string, Image>> make_crops(const AnnotatedSample& sample,
                                                      const ImageLoader& loader) {
  const Image image = decode_image(loader(sample.image_ref));
  std::vector<std::pair<std::string, Image>> out;
  out.reserve(sample.boxes.size());
  for (const auto& box : sample.boxes) out.emplace_back(box.concept_name, crop(image, box.bbox));
  return out;
}

FileAnnotator FileAnnotator::parse(const std::string& json_text) {
  FileAnnotator annotator;
  try {
    annotator.doc_ = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kAnnotatorUnavailable, std::string("malformed annotations: ") + e.what());
  }
  return annotator;
}

FileAnnotator FileAnnotator::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

std::string FileAnnotator::annotate(TaskKind task, const AnnotatedSample& sample,
                                    const std::string& instruction) {
  const std::string section(to_string(task));
  if (doc_.contains(section) && doc_[section].contains(sample.image_ref)) {
    const json& entry = doc_[section][sample.image_ref];
    if (entry.is_string()) return entry.get<std::string>();
    if (entry.is_object() && entry.contains(instruction) && entry[instruction].is_string()) {
      return entry[instruction].get<std::string>();
    }
  }
  if (task == TaskKind::kCaption && sample.caption) return *sample.caption;
  throw Error(ErrorCode::kAnnotatorUnavailable,
              "no " + section + " annotation for " + sample.image_ref);
}

std::string FileAnnotator::describe(const std::string& concept_name) {
  if (doc_.contains("concepts") && doc_["concepts"].contains(concept_name)) {
    return doc_["concepts"][concept_name].get<std::string>();
  }
  return {};
}

std::string UnconfiguredAnnotator::annotate(TaskKind, const AnnotatedSample&,
                                            const std::string&) {
  throw Error(ErrorCode::kAnnotatorUnavailable, "no remote annotator configured");
}

std::string UnconfiguredAnnotator::describe(const std::string&) {
  throw Error(ErrorCode::kAnnotatorUnavailable, "no remote annotator configured");
}

const std::string& RecordBuilder::pick(const std::vector<std::string>& bank) {
  return bank[draw(rng_, bank.size())];
}

TrainingRecord RecordBuilder::grounding(const AnnotatedSample& sample, std::size_t box_index,
                                        const ConceptRef& concept_ref) {
  if (box_index >= sample.boxes.size()) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "box index " + std::to_string(box_index) + " out of range");
  }
  const AnnotatedBox& box = sample.boxes[box_index];
  ConceptRef ref = concept_ref;
  ref.name = box.concept_name;
  TrainingRecord record;
  record.task = TaskKind::kGrounding;
  push_concept(record.inputs, ref);
  push_query(record.inputs, sample, substitute(pick(bank_.grounding), "⟨V⟩", ref.name));
  record.target = format_bbox(box.bbox);
  return record;
}

TrainingRecord RecordBuilder::recognition(const AnnotatedSample& sample,
                                          const ConceptRef& concept_ref, Polarity polarity) {
  const bool present = sample_has(sample, concept_ref.name);
  if (polarity == Polarity::kNegative && present) {
    throw Error(ErrorCode::kPolarityContradiction,
                concept_ref.name + " is in the sample; cannot make a negative record");
  }
  if (polarity == Polarity::kPositive && !present) {
    throw Error(ErrorCode::kPolarityContradiction,
                concept_ref.name + " is not in the sample; cannot make a positive record");
  }
  TrainingRecord record;
  record.task = TaskKind::kRecognition;
  push_concept(record.inputs, concept_ref);
  push_query(record.inputs, sample,
             substitute(pick(bank_.recognition), "⟨V⟩", concept_ref.name));
  const auto& answers =
      polarity == Polarity::kPositive ? bank_.answer_positive : bank_.answer_negative;
  record.target = substitute(pick(answers), "⟨V⟩", concept_ref.name);
  return record;
}

TrainingRecord RecordBuilder::instruction(const AnnotatedSample& sample, TaskKind task,
                                          const std::vector<ConceptRef>& concepts,
                                          Annotator& annotator) {
  std::string prompt;
  switch (task) {
    case TaskKind::kCaption: prompt = pick(bank_.caption); break;
    case TaskKind::kDescription: prompt = pick(bank_.description); break;
    case TaskKind::kQa: {
      if (concepts.empty()) {
        throw Error(ErrorCode::kInvalidArgument, "qa records need at least one concept");
      }
      if (concepts.size() >= 2 && !bank_.qa_multi.empty() && draw(rng_, 3) == 0) {
        prompt = substitute(substitute(pick(bank_.qa_multi), "⟨C1⟩", concepts[0].name), "⟨C2⟩",
                            concepts[1].name);
        break;
      }
      const ConceptRef& subject = concepts[draw(rng_, concepts.size())];
      std::string category;
      for (const auto& b : sample.boxes) {
        if (b.concept_name == subject.name) category = b.category;
      }
      const bool person =
          std::find(bank_.person_categories.begin(), bank_.person_categories.end(), category) !=
          bank_.person_categories.end();
      prompt = person ? substitute(pick(bank_.qa_person), "⟨H⟩", subject.name)
                      : substitute(pick(bank_.qa_object), "⟨O⟩", subject.name);
      break;
    }
    default:
      throw Error(ErrorCode::kInvalidArgument, "instruction records are caption/description/qa");
  }
  TrainingRecord record;
  record.task = task;
  for (const auto& c : concepts) push_concept(record.inputs, c);
  push_query(record.inputs, sample, prompt);
  record.target = annotator.annotate(task, sample, prompt);
  return record;
}

TrainingRecord RecordBuilder::inject_negatives(const TrainingRecord& record,
                                               const std::vector<ConceptRef>& noise,
                                               std::size_t count) {
  for (const auto& n : noise) {
    if (record.target.find(n.name) != std::string::npos) {
      throw Error(ErrorCode::kNoiseOverlapsTarget, n.name + " appears in the record target");
    }
  }
  if (count == 0) return record;
  if (count > noise.size()) {
    throw Error(ErrorCode::kInvalidArgument, "not enough noise concepts for requested count");
  }
  std::vector<std::size_t> order(noise.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw(rng_, i)]);

  TrainingRecord out = record;
  for (std::size_t i = 0; i < count; ++i) {
    const ConceptRef& n = noise[order[i]];
    if (inputs_mention(out.inputs, n.name)) {
      throw Error(ErrorCode::kInvalidArgument, n.name + " is already among the record inputs");
    }
    const std::size_t slot = draw(rng_, concept_pairs(out.inputs) + 1);
    std::vector<PromptSegment> pair;
    push_concept(pair, n);
    out.inputs.insert(out.inputs.begin() + static_cast<std::ptrdiff_t>(2 * slot), pair.begin(),
                      pair.end());
    out.negatives_injected.push_back(n.name);
  }
  return out;
}

std::array<std::size_t, 4> apportion(const TaskMix& mix, std::size_t total) {
  const std::array<double, 4> weights = {mix.grounding, mix.recognition,
                                         mix.caption_description, mix.qa};
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) {
      throw Error(ErrorCode::kInvalidArgument, "task mix weights must be finite and >= 0");
    }
    sum += w;
  }
  if (sum <= 0.0) throw Error(ErrorCode::kInvalidArgument, "task mix is all zero");
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double exact = total * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::array<std::size_t, 4> order = {0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % 4]];
  return counts;
}

GeneratedDataset generate_dataset(const std::vector<AnnotatedSample>& corpus,
                                  const ImageLoader& loader, Annotator& annotator,
                                  const TemplateBank& bank, const DatagenConfig& config) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyInput, "empty corpus");
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    if (corpus[s].boxes.empty()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "sample " + std::to_string(s) + " (" + corpus[s].image_ref + ") has no boxes");
    }
  }

  GeneratedDataset out;
  std::map<std::string, std::string> descriptions;
  auto describe = [&](const std::string& name) -> const std::string& {
    auto it = descriptions.find(name);
    if (it == descriptions.end()) it = descriptions.emplace(name, annotator.describe(name)).first;
    return it->second;
  };
  auto crop_ref = [](std::size_t s, std::size_t b) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "crops/s%05zu_b%02zu.png", s, b);
    return std::string(buf);
  };
  std::map<std::size_t, Image> decoded;
  auto materialize_crop = [&](std::size_t s, std::size_t b) {
    const std::string ref = crop_ref(s, b);
    if (out.crops.contains(ref)) return;
    auto it = decoded.find(s);
    if (it == decoded.end()) it = decoded.emplace(s, decode_image(loader(corpus[s].image_ref))).first;
    Image image = crop(it->second, corpus[s].boxes[b].bbox);
    if (config.augment && !config.augment_ops.empty()) {
      image = augment(image, config.augment_ops, mix_seed(config.seed, s + 1, b + 1)).front().image;
    }
    out.crops.emplace(ref, encode_png(image));
  };
  auto ref_for = [&](std::size_t s, std::size_t b) {
    materialize_crop(s, b);
    const auto& name = corpus[s].boxes[b].concept_name;
    return ConceptRef{name, crop_ref(s, b), describe(name)};
  };

  // First occurrence of every concept, in corpus order.
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  {
    std::set<std::string> seen;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      for (std::size_t b = 0; b < corpus[s].boxes.size(); ++b) {
        if (seen.insert(corpus[s].boxes[b].concept_name).second) pool.emplace_back(s, b);
      }
    }
  }

  const auto counts = apportion(config.mix, config.records);
  std::vector<TaskKind> tasks;
  tasks.insert(tasks.end(), counts[0], TaskKind::kGrounding);
  tasks.insert(tasks.end(), counts[1], TaskKind::kRecognition);
  tasks.insert(tasks.end(), (counts[2] + 1) / 2, TaskKind::kCaption);
  tasks.insert(tasks.end(), counts[2] / 2, TaskKind::kDescription);
  tasks.insert(tasks.end(), counts[3], TaskKind::kQa);
  {
    std::mt19937_64 rng(mix_seed(config.seed, 0));
    for (std::size_t i = tasks.size(); i > 1; --i) std::swap(tasks[i - 1], tasks[draw(rng, i)]);
  }

  out.records.reserve(tasks.size());
  out.sources.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    RecordBuilder builder(bank, mix_seed(config.seed, i + 1, 0x5EED));
    auto& rng = builder.rng();
    const std::size_t s = i % corpus.size();
    const AnnotatedSample& sample = corpus[s];

    TrainingRecord record;
    switch (tasks[i]) {
      case TaskKind::kGrounding: {
        const std::size_t b = draw(rng, sample.boxes.size());
        record = builder.grounding(sample, b, ref_for(s, b));
        break;
      }
      case TaskKind::kRecognition: {
        std::vector<std::pair<std::size_t, std::size_t>> absent;
        for (const auto& p : pool) {
          if (!sample_has(sample, corpus[p.first].boxes[p.second].concept_name)) absent.push_back(p);
        }
        if (draw(rng, 2) == 1 && !absent.empty()) {
          const auto [ps, pb] = absent[draw(rng, absent.size())];
          record = builder.recognition(sample, ref_for(ps, pb), Polarity::kNegative);
        } else {
          const std::size_t b = draw(rng, sample.boxes.size());
          record = builder.recognition(sample, ref_for(s, b), Polarity::kPositive);
        }
        break;
      }
      default: {
        std::vector<ConceptRef> refs;
        std::set<std::string> names;
        for (std::size_t b = 0; b < sample.boxes.size(); ++b) {
          if (names.insert(sample.boxes[b].concept_name).second) refs.push_back(ref_for(s, b));
        }
        record = builder.instruction(sample, tasks[i], refs, annotator);
        break;
      }
    }

    std::optional<TrainingRecord> source;
    if (config.negatives_per_record > 0 && draw_unit(rng) < config.negative_ratio) {
      std::vector<std::pair<std::size_t, std::size_t>> candidates;
      for (const auto& p : pool) {
        const auto& name = corpus[p.first].boxes[p.second].concept_name;
        if (!sample_has(sample, name) && !inputs_mention(record.inputs, name) &&
            record.target.find(name) == std::string::npos) {
          candidates.push_back(p);
        }
      }
      if (candidates.size() >= config.negatives_per_record) {
        std::vector<ConceptRef> noise;
        for (const auto& [ps, pb] : candidates) {
          const auto& name = corpus[ps].boxes[pb].concept_name;
          noise.push_back({name, crop_ref(ps, pb), describe(name)});
        }
        source = record;
        record = builder.inject_negatives(record, noise, config.negatives_per_record);
        for (const auto& [ps, pb] : candidates) {
          const auto& name = corpus[ps].boxes[pb].concept_name;
          if (std::find(record.negatives_injected.begin(), record.negatives_injected.end(),
                        name) != record.negatives_injected.end()) {
            materialize_crop(ps, pb);
          }
        }
      }
    }
    out.records.push_back(std::move(record));
    out.sources.push_back(std::move(source));
  }

  out.stats["Visual Grounding"] = counts[0];
  out.stats["Recognition"] = counts[1];
  out.stats["Caption & Description"] = counts[2];
  out.stats["Question Answering"] = counts[3];
  return out;
}

void write_dataset(const GeneratedDataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "crops", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  std::string lines;
  for (const auto& r : dataset.records) {
    lines += to_jsonl_line(r);
    lines += '\n';
  }
  write_file_atomic(dir / "records.jsonl", lines);
  write_file_atomic(dir / "stats.json", json(dataset.stats).dump(2) + "\n");
  for (const auto& [ref, bytes] : dataset.crops) write_file_atomic(dir / ref, bytes);
}

}  // namespace persona
