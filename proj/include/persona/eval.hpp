#pragma once

// Personalization metrics: caption recall/precision/F1 over concept-name
// mentions, yes/no recognition accuracy, QA accuracy, retriever Top-K sweeps,
// and per-concept personalization cost.

#include <cstddef>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/concept_store.hpp"
#include "persona/perception.hpp"

namespace persona {

struct NameMention {
  std::string name;
  bool known = false;

  friend bool operator==(const NameMention&, const NameMention&) = default;
};

std::vector<NameMention> extract_concept_names(const std::string& caption,
                                               const std::set<std::string>& known_names,
                                               const NameDelimiters& delimiters = {});

struct CaptionSample {
  std::string generated_caption;
  std::set<std::string> ground_truth;
};

struct CaptionCounts {
  std::size_t true_mentions = 0;  // distinct ground-truth concepts mentioned
  std::size_t total_gt = 0;
  std::size_t correct_names = 0;  // mentions naming a ground-truth concept
  std::size_t total_names = 0;    // all mentions, repeats and unknowns included
};

struct MetricsReport {
  double recall = 0.0;  // percent
  double precision = 0.0;
  double f1 = 0.0;
  CaptionCounts counts;
  std::vector<CaptionCounts> per_sample;
};

// Micro-aggregated over samples. A caption with no mentions contributes
// nothing to the precision denominator; precision is 0 when no sample
// mentions any name. EmptyInput on no samples.
MetricsReport caption_metrics(const std::vector<CaptionSample>& samples,
                              const std::set<std::string>& known_names,
                              const NameDelimiters& delimiters = {});

// Harmonic mean of two percentages; 0 when both are 0.
double f1_score(double precision_pct, double recall_pct);

enum class Split { kPositive, kNegative };

struct BinaryResult {
  bool predicted_yes = false;
  bool expected_yes = false;
  Split split = Split::kPositive;
};

struct BinaryAccuracy {
  double positive = 0.0;
  double negative = 0.0;
  double weighted = 0.0;  // (positive + negative) / 2
};

// EmptyInput unless both splits have at least one result.
BinaryAccuracy binary_accuracy(const std::vector<BinaryResult>& results);

enum class Answer { kYes, kNo, kUnknown };

// First standalone "yes" or "no" word in the reply, case-insensitive.
Answer parse_answer(const std::string& reply);

struct QaAccuracy {
  double visual = 0.0;
  double text = 0.0;
  double weighted = 0.0;
};

QaAccuracy qa_accuracy(const std::vector<bool>& visual_correct,
                       const std::vector<bool>& text_correct);

struct LabeledQuery {
  EmbeddingVector embedding;
  std::string truth_id;
};

struct SweepRow {
  std::size_t n = 0;
  int k = 0;
  double recall = 0.0;
  double precision = 0.0;
};

using StoreBuilder = std::function<SnapshotPtr(std::size_t n)>;

// One row per (N, K), N-major. recall = share of queries whose truth is in
// the top K; precision = correct hits / (K * queries). UnknownTruth when a
// query's truth id is missing from the store built for some N.
std::vector<SweepRow> retriever_sweep(const StoreBuilder& build,
                                      const std::vector<LabeledQuery>& queries,
                                      const std::vector<std::size_t>& ns,
                                      const std::vector<int>& ks,
                                      DistanceMode mode = DistanceMode::kEuclidean);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

// Synthetic sweep data: `pool` random keys with ids "concept-000000"...,
// and for the first `query_concepts` of them one query each, equal to the
// key plus Gaussian noise of the given standard deviation.
struct SyntheticSweep {
  std::vector<ConceptRecord> concepts;
  std::vector<LabeledQuery> queries;

  // Snapshot over the first n concepts.
  SnapshotPtr build(std::size_t n) const;
};

SyntheticSweep make_synthetic_sweep(std::size_t pool, std::size_t query_concepts, int dim,
                                    double noise_sigma, std::uint64_t seed);

struct TimingReport {
  std::vector<double> per_concept_ms;
  std::vector<double> cumulative_ms;
  double total_ms = 0.0;
};

// Embeds image_for(i) and adds it as concept i, timing each pair of steps.
TimingReport time_personalization(ConceptStore& store, Embedder& embedder, std::size_t n,
                                  const std::function<std::string(std::size_t)>& image_for);

// metrics.json body and the matching "metric,value" CSV.
nlohmann::json metrics_to_json(const MetricsReport& report);
std::string metrics_to_csv(const std::vector<std::pair<std::string, double>>& rows);

}  // namespace persona
