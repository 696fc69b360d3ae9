#include <gtest/gtest.h>

#include <cmath>
#include <regex>

#include "persona/datagen.hpp"
#include "persona/util.hpp"
#include "support.hpp"

using namespace persona;
using nlohmann::json;
using persona::testkit::coordinate_image;

namespace {

const std::regex kBboxRe(R"(^\[\d+\.\d{2}, \d+\.\d{2}, \d+\.\d{2}, \d+\.\d{2}\]$)");

TemplateBank tiny_bank() {
  return TemplateBank::parse(R"({
    "recognition": ["Is ⟨V⟩ here?"],
    "grounding": ["Where is ⟨V⟩?"],
    "caption": ["Caption it."],
    "description": ["Describe it."],
    "qa_person": ["What is ⟨H⟩ wearing?"],
    "qa_object": ["What color is ⟨O⟩?"],
    "answer_positive": ["Yes, ⟨V⟩ is here."],
    "answer_negative": ["No, ⟨V⟩ is not here."],
    "person_categories": ["person"]
  })");
}

AnnotatedSample two_box_sample() {
  AnnotatedSample s;
  s.image_ref = "scene.png";
  s.boxes = {{{0.1, 0.2, 0.5, 0.75}, "⟨bob⟩", "person"}, {{0.5, 0.5, 1.0, 1.0}, "⟨mug⟩", "cup"}};
  s.caption = "⟨bob⟩ holds ⟨mug⟩.";
  return s;
}

// Largest remainder written out longhand.
std::array<std::size_t, 4> apportion_oracle(const std::array<double, 4>& w, std::size_t total) {
  const double sum = w[0] + w[1] + w[2] + w[3];
  std::array<std::size_t, 4> out{};
  std::vector<std::pair<double, int>> rem;
  std::size_t used = 0;
  for (int i = 0; i < 4; ++i) {
    const double exact = static_cast<double>(total) * w[i] / sum;
    out[i] = static_cast<std::size_t>(exact);
    used += out[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t j = 0; used < total; ++j, ++used) ++out[rem[j % 4].second];
  return out;
}

}  // namespace

TEST(Datagen, FormatBbox) {
  EXPECT_EQ(format_bbox({0.1, 0.2, 0.5, 0.75}), "[0.10, 0.20, 0.50, 0.75]");
  EXPECT_EQ(format_bbox({0, 0, 1, 1}), "[0.00, 0.00, 1.00, 1.00]");
  EXPECT_EQ(format_bbox({0.123, 0.456, 0.789, 0.999}), "[0.12, 0.46, 0.79, 1.00]");
}

TEST(Datagen, ParseCorpusAndRoundTrip) {
  const std::string text =
      R"({"image_ref": "a.png", "boxes": [{"bbox": [0.1, 0.2, 0.5, 0.75], "concept_name": "⟨bob⟩", "category": "person"}], "caption": "hi"})"
      "\n\n"
      R"({"image_ref": "b.png", "boxes": []})"
      "\n";
  const auto corpus = parse_corpus(text);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[0].boxes[0].bbox, (BBox{0.1, 0.2, 0.5, 0.75}));
  EXPECT_EQ(corpus[0].caption, "hi");
  EXPECT_FALSE(corpus[1].caption);
  EXPECT_EQ(parse_corpus(to_json(corpus[0]).dump())[0].boxes[0].concept_name, "⟨bob⟩");
}

TEST(Datagen, ParseCorpusReportsLine) {
  const std::string bad =
      R"({"image_ref": "a.png", "boxes": []})"
      "\n"
      R"({"image_ref": "b.png", "boxes": [{"bbox": [0.5, 0.2, 0.1, 0.75], "concept_name": "⟨x⟩"}]})";
  try {
    parse_corpus(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_corpus(R"({"image_ref": "a.png", "boxes": [{"bbox": [0, 0, 1, 1], "concept_name": ""}]})"),
               Error);
  EXPECT_THROW(parse_corpus("{not json"), Error);
}

TEST(Datagen, ApportionDefaultMix) {
  const auto counts = apportion(TaskMix{}, 1000);
  // 1000 * {100, 40, 37, 16} / 193 = 518.13, 207.25, 191.71, 82.90
  EXPECT_EQ(counts, (std::array<std::size_t, 4>{518, 207, 192, 83}));
  EXPECT_EQ(counts, apportion_oracle({100, 40, 37, 16}, 1000));
}

TEST(Datagen, ApportionProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> w(0.0, 50.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::array<double, 4> weights = {w(rng), w(rng), w(rng), w(rng) + 0.1};
    const std::size_t total = rng() % 5000;
    const auto counts = apportion({weights[0], weights[1], weights[2], weights[3]}, total);
    EXPECT_EQ(counts[0] + counts[1] + counts[2] + counts[3], total);
    const double sum = weights[0] + weights[1] + weights[2] + weights[3];
    for (int i = 0; i < 4; ++i) {
      EXPECT_LT(std::abs(static_cast<double>(counts[i]) - total * weights[i] / sum), 1.0 + 1e-9);
    }
    EXPECT_EQ(counts, apportion_oracle(weights, total));
  }
  EXPECT_THROW(apportion({0, 0, 0, 0}, 10), Error);
  EXPECT_THROW(apportion({-1, 1, 1, 1}, 10), Error);
}

TEST(Datagen, Substitute) {
  EXPECT_EQ(substitute("Is ⟨V⟩ near ⟨V⟩?", "⟨V⟩", "⟨dog⟩"), "Is ⟨dog⟩ near ⟨dog⟩?");
  EXPECT_EQ(substitute("⟨V⟩", "⟨V⟩", "⟨V⟩⟨V⟩"), "⟨V⟩⟨V⟩");
  EXPECT_EQ(substitute("nothing", "⟨V⟩", "x"), "nothing");
}

TEST(Augment, PixelOracles) {
  const Image img = coordinate_image(3, 2, 1);
  const Image r90 = apply_ops(img, {AugmentOp::kRot90});
  ASSERT_EQ(r90.width, 2);
  ASSERT_EQ(r90.height, 3);
  // Clockwise: the bottom-left source pixel lands top-left.
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 2; ++x) EXPECT_EQ(r90.at(x, y, 0), img.at(y, 1 - x, 0));
  const Image fh = apply_ops(img, {AugmentOp::kFlipH});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) EXPECT_EQ(fh.at(x, y, 0), img.at(2 - x, y, 0));
  const Image fv = apply_ops(img, {AugmentOp::kFlipV});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) EXPECT_EQ(fv.at(x, y, 0), img.at(x, 1 - y, 0));
}

TEST(Augment, GroupProperties) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Image img = coordinate_image(1 + rng() % 9, 1 + rng() % 9, 3, trial);
    EXPECT_EQ(apply_ops(img, {AugmentOp::kFlipH, AugmentOp::kFlipH}), img);
    EXPECT_EQ(apply_ops(img, {AugmentOp::kFlipV, AugmentOp::kFlipV}), img);
    EXPECT_EQ(apply_ops(img, {AugmentOp::kRot90, AugmentOp::kRot90, AugmentOp::kRot90, AugmentOp::kRot90}), img);
    EXPECT_EQ(apply_ops(img, {AugmentOp::kRot90, AugmentOp::kRot270}), img);
    EXPECT_EQ(apply_ops(img, {AugmentOp::kRot180}), apply_ops(img, {AugmentOp::kFlipH, AugmentOp::kFlipV}));
  }
}

TEST(Augment, SeededVariants) {
  const Image img = coordinate_image(5, 4);
  const std::vector<AugmentOp> ops = {AugmentOp::kFlipH, AugmentOp::kRot90, AugmentOp::kRot270};
  const auto a = augment(img, ops, 99, 8);
  const auto b = augment(img, ops, 99, 8);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].ops, b[i].ops);
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_GE(a[i].ops.size(), 1u);
    EXPECT_LE(a[i].ops.size(), 2u);
    EXPECT_EQ(a[i].image, apply_ops(img, a[i].ops));
  }
  EXPECT_THROW(augment(img, {}, 1), Error);
}

TEST(Records, GroundingLayout) {
  const auto bank = tiny_bank();
  RecordBuilder builder(bank, 1);
  const auto r = builder.grounding(two_box_sample(), 0, {"⟨bob⟩", "crops/bob.png", "tall"});
  EXPECT_EQ(r.task, TaskKind::kGrounding);
  EXPECT_EQ(r.target, "[0.10, 0.20, 0.50, 0.75]");
  ASSERT_EQ(r.inputs.size(), 4u);
  EXPECT_EQ(r.inputs[0], (PromptSegment{PromptSegment::Kind::kImageRef, "crops/bob.png"}));
  EXPECT_EQ(r.inputs[1].payload, "<concept name=⟨bob⟩>tall</concept>");
  EXPECT_EQ(r.inputs[2], (PromptSegment{PromptSegment::Kind::kImageRef, "scene.png"}));
  EXPECT_EQ(r.inputs[3].payload, "Where is ⟨bob⟩?");
  EXPECT_THROW(builder.grounding(two_box_sample(), 2, {}), Error);
}

TEST(Records, RecognitionPolarity) {
  const auto bank = tiny_bank();
  RecordBuilder builder(bank, 1);
  const auto sample = two_box_sample();
  EXPECT_EQ(builder.recognition(sample, {"⟨bob⟩", "b.png", ""}, Polarity::kPositive).target,
            "Yes, ⟨bob⟩ is here.");
  EXPECT_EQ(builder.recognition(sample, {"⟨cat⟩", "c.png", ""}, Polarity::kNegative).target,
            "No, ⟨cat⟩ is not here.");
  try {
    builder.recognition(sample, {"⟨bob⟩", "b.png", ""}, Polarity::kNegative);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPolarityContradiction);
  }
  EXPECT_THROW(builder.recognition(sample, {"⟨cat⟩", "c.png", ""}, Polarity::kPositive), Error);
}

TEST(Records, InstructionTargetsComeFromAnnotator) {
  const auto bank = tiny_bank();
  RecordBuilder builder(bank, 3);
  auto annotator = FileAnnotator::parse(R"({"qa": {"scene.png": "Blue."}})");
  const auto sample = two_box_sample();
  const auto caption = builder.instruction(sample, TaskKind::kCaption, {{"⟨bob⟩", "b.png", ""}}, annotator);
  EXPECT_EQ(caption.target, "⟨bob⟩ holds ⟨mug⟩.");
  const auto qa = builder.instruction(sample, TaskKind::kQa, {{"⟨mug⟩", "m.png", ""}}, annotator);
  EXPECT_EQ(qa.inputs.back().payload, "What color is ⟨mug⟩?");
  EXPECT_EQ(qa.target, "Blue.");
  const auto qa_person = builder.instruction(sample, TaskKind::kQa, {{"⟨bob⟩", "b.png", ""}}, annotator);
  EXPECT_EQ(qa_person.inputs.back().payload, "What is ⟨bob⟩ wearing?");
  try {
    builder.instruction(sample, TaskKind::kDescription, {}, annotator);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAnnotatorUnavailable);
  }
  UnconfiguredAnnotator none;
  EXPECT_THROW(builder.instruction(sample, TaskKind::kDescription, {}, none), Error);
  EXPECT_THROW(none.describe("⟨bob⟩"), Error);
}

TEST(Records, InjectNegativesKeepsTarget) {
  const auto bank = tiny_bank();
  RecordBuilder builder(bank, 8);
  const auto base = builder.grounding(two_box_sample(), 1, {"⟨mug⟩", "m.png", ""});
  const std::vector<ConceptRef> noise = {{"⟨cat⟩", "c.png", "fluffy"}, {"⟨car⟩", "r.png", ""}};
  const auto out = builder.inject_negatives(base, noise, 2);
  EXPECT_EQ(out.target, base.target);
  EXPECT_EQ(out.inputs.size(), base.inputs.size() + 4);
  ASSERT_EQ(out.negatives_injected.size(), 2u);
  // Query image and instruction stay last.
  EXPECT_EQ(out.inputs[out.inputs.size() - 2], base.inputs[2]);
  EXPECT_EQ(out.inputs.back(), base.inputs[3]);
  // Removing the injected pairs gives the source back.
  std::vector<PromptSegment> stripped;
  for (std::size_t i = 0; i < out.inputs.size(); ++i) {
    const bool noise_pair = i + 1 < out.inputs.size() &&
                            (out.inputs[i + 1].payload.starts_with("<concept name=⟨cat⟩") ||
                             out.inputs[i + 1].payload.starts_with("<concept name=⟨car⟩"));
    if (noise_pair) {
      ++i;
      continue;
    }
    stripped.push_back(out.inputs[i]);
  }
  EXPECT_EQ(stripped, base.inputs);
  EXPECT_FALSE(validate_record(out));
  EXPECT_EQ(builder.inject_negatives(base, noise, 0), base);
  EXPECT_THROW(builder.inject_negatives(base, noise, 3), Error);
}

TEST(Records, NoiseOverlappingTargetRejected) {
  const auto bank = tiny_bank();
  RecordBuilder builder(bank, 8);
  const auto base = builder.recognition(two_box_sample(), {"⟨cat⟩", "c.png", ""}, Polarity::kNegative);
  try {
    builder.inject_negatives(base, {{"⟨cat⟩", "c.png", ""}}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoiseOverlapsTarget);
  }
}

TEST(Records, ValidateRecord) {
  TrainingRecord r;
  r.task = TaskKind::kGrounding;
  r.target = "[0.1, 0.20, 0.50, 0.75]";
  EXPECT_TRUE(validate_record(r));
  r.target = "[0.10, 0.20, 0.50, 0.75]";
  EXPECT_FALSE(validate_record(r));
  r.task = TaskKind::kCaption;
  r.target = "⟨a⟩ sits.";
  r.negatives_injected = {"⟨a⟩"};
  EXPECT_TRUE(validate_record(r));
}

TEST(Records, JsonlLineShape) {
  TrainingRecord r;
  r.task = TaskKind::kQa;
  r.inputs = {{PromptSegment::Kind::kImageRef, "x.png"}, {PromptSegment::Kind::kText, "line\nbreak"}};
  r.target = "t";
  const std::string line = to_jsonl_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(line,
            R"({"inputs":[{"kind":"image_ref","payload":"x.png"},{"kind":"text","payload":"line\nbreak"}],)"
            R"("negatives_injected":[],"target":"t","task":"qa"})");
}

TEST(Templates, DefaultBankLoads) {
  const auto bank = TemplateBank::load_default();
  EXPECT_FALSE(bank.recognition.empty());
  for (const auto& t : bank.recognition) EXPECT_NE(t.find("⟨V⟩"), std::string::npos);
  for (const auto& t : bank.grounding) EXPECT_NE(t.find("⟨V⟩"), std::string::npos);
  for (const auto& t : bank.qa_person) EXPECT_NE(t.find("⟨H⟩"), std::string::npos);
  for (const auto& t : bank.qa_object) EXPECT_NE(t.find("⟨O⟩"), std::string::npos);
  EXPECT_THROW(TemplateBank::parse(R"({"recognition": []})"), Error);
}

class Dataset : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus = testkit::make_corpus(dir.path(), 40, 20, 3);
  }
  GeneratedDataset run(std::uint64_t seed, std::size_t records = 1000) {
    auto annotator = FileAnnotator::parse(corpus.annotations.dump());
    DatagenConfig config;
    config.records = records;
    config.seed = seed;
    return generate_dataset(corpus.samples, directory_loader(dir.path()), annotator,
                            TemplateBank::load_default(), config);
  }
  static std::string jsonl(const GeneratedDataset& d) {
    std::string out;
    for (const auto& r : d.records) out += to_jsonl_line(r) + "\n";
    return out;
  }

  testkit::TempDir dir;
  testkit::SyntheticCorpus corpus;
};

TEST_F(Dataset, SameSeedSameBytes) {
  const auto a = run(17);
  const auto b = run(17);
  EXPECT_EQ(jsonl(a), jsonl(b));
  EXPECT_EQ(a.crops, b.crops);
  EXPECT_NE(jsonl(a), jsonl(run(18)));
}

TEST_F(Dataset, TaskMixAndInvariants) {
  const auto d = run(5);
  ASSERT_EQ(d.records.size(), 1000u);
  std::map<TaskKind, std::size_t> seen;
  std::size_t injected = 0;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    ++seen[r.task];
    EXPECT_FALSE(validate_record(r)) << i;
    if (r.task == TaskKind::kGrounding) EXPECT_TRUE(std::regex_match(r.target, kBboxRe)) << r.target;
    EXPECT_EQ(d.sources[i].has_value(), !r.negatives_injected.empty());
    if (d.sources[i]) {
      ++injected;
      EXPECT_EQ(d.sources[i]->target, r.target);
      for (const auto& n : r.negatives_injected) EXPECT_EQ(r.target.find(n), std::string::npos);
    }
    for (const auto& s : r.inputs) {
      if (s.kind == PromptSegment::Kind::kImageRef && s.payload.starts_with("crops/")) {
        EXPECT_TRUE(d.crops.contains(s.payload)) << s.payload;
      }
    }
  }
  const auto expected = apportion_oracle({100, 40, 37, 16}, 1000);
  EXPECT_EQ(seen[TaskKind::kGrounding], expected[0]);
  EXPECT_EQ(seen[TaskKind::kRecognition], expected[1]);
  EXPECT_EQ(seen[TaskKind::kCaption] + seen[TaskKind::kDescription], expected[2]);
  EXPECT_EQ(seen[TaskKind::kQa], expected[3]);
  EXPECT_EQ(d.stats.at("Visual Grounding"), expected[0]);
  // Roughly the configured share of records carries noise.
  EXPECT_GT(injected, 200u);
  EXPECT_LT(injected, 400u);
}

TEST_F(Dataset, WritesFiles) {
  const auto d = run(2, 50);
  testkit::TempDir out;
  write_dataset(d, out.path());
  const std::string lines = read_file(out / "records.jsonl");
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 50);
  EXPECT_EQ(json::parse(read_file(out / "stats.json")).size(), 4u);
  for (const auto& [ref, bytes] : d.crops) EXPECT_EQ(read_file(out.path() / ref), bytes);
}

TEST_F(Dataset, RejectsBadCorpus) {
  auto annotator = FileAnnotator::parse("{}");
  EXPECT_THROW(generate_dataset({}, directory_loader(dir.path()), annotator, tiny_bank(), {}), Error);
  AnnotatedSample empty;
  empty.image_ref = "img0.png";
  EXPECT_THROW(generate_dataset({empty}, directory_loader(dir.path()), annotator, tiny_bank(), {}), Error);
}
