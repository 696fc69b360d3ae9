#include "persona/eval.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <unordered_set>

#include "persona/retriever.hpp"

namespace persona {

using nlohmann::json;

std::vector<NameMention> extract_concept_names(const std::string& caption,
                                               const std::set<std::string>& known_names,
                                               const NameDelimiters& delimiters) {
  std::vector<NameMention> out;
  for (auto& token : scan_name_tokens(caption, delimiters)) {
    const bool known = known_names.contains(token);
    out.push_back({std::move(token), known});
  }
  return out;
}

double f1_score(double precision_pct, double recall_pct) {
  const double sum = precision_pct + recall_pct;
  return sum == 0.0 ? 0.0 : 2.0 * precision_pct * recall_pct / sum;
}

MetricsReport caption_metrics(const std::vector<CaptionSample>& samples,
                              const std::set<std::string>& known_names,
                              const NameDelimiters& delimiters) {
  if (samples.empty()) throw Error(ErrorCode::kEmptyInput, "no caption samples");
  MetricsReport report;
  for (const auto& sample : samples) {
    CaptionCounts c;
    c.total_gt = sample.ground_truth.size();
    std::set<std::string> mentioned;
    for (const auto& m : extract_concept_names(sample.generated_caption, known_names, delimiters)) {
      ++c.total_names;
      // Unknown names can never be ground truth for a stored concept.
      if (m.known && sample.ground_truth.contains(m.name)) {
        ++c.correct_names;
        mentioned.insert(m.name);
      }
    }
    c.true_mentions = mentioned.size();
    report.counts.true_mentions += c.true_mentions;
    report.counts.total_gt += c.total_gt;
    report.counts.correct_names += c.correct_names;
    report.counts.total_names += c.total_names;
    report.per_sample.push_back(c);
  }
  const auto& t = report.counts;
  report.recall = t.total_gt == 0 ? 0.0 : 100.0 * t.true_mentions / t.total_gt;
  report.precision = t.total_names == 0 ? 0.0 : 100.0 * t.correct_names / t.total_names;
  report.f1 = f1_score(report.precision, report.recall);
  return report;
}

BinaryAccuracy binary_accuracy(const std::vector<BinaryResult>& results) {
  std::size_t pos_total = 0, pos_ok = 0, neg_total = 0, neg_ok = 0;
  for (const auto& r : results) {
    const bool ok = r.predicted_yes == r.expected_yes;
    if (r.split == Split::kPositive) {
      ++pos_total;
      pos_ok += ok;
    } else {
      ++neg_total;
      neg_ok += ok;
    }
  }
  if (pos_total == 0 || neg_total == 0) {
    throw Error(ErrorCode::kEmptyInput, "binary accuracy needs positive and negative results");
  }
  BinaryAccuracy acc;
  acc.positive = static_cast<double>(pos_ok) / pos_total;
  acc.negative = static_cast<double>(neg_ok) / neg_total;
  acc.weighted = (acc.positive + acc.negative) / 2.0;
  return acc;
}

Answer parse_answer(const std::string& reply) {
  std::string word;
  auto classify = [&]() {
    if (word == "yes") return Answer::kYes;
    if (word == "no") return Answer::kNo;
    return Answer::kUnknown;
  };
  for (char ch : reply) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalpha(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (const Answer a = classify(); a != Answer::kUnknown) return a;
    word.clear();
  }
  return classify();
}

QaAccuracy qa_accuracy(const std::vector<bool>& visual_correct,
                       const std::vector<bool>& text_correct) {
  if (visual_correct.empty() || text_correct.empty()) {
    throw Error(ErrorCode::kEmptyInput, "qa accuracy needs visual and text results");
  }
  auto mean = [](const std::vector<bool>& v) {
    return static_cast<double>(std::count(v.begin(), v.end(), true)) / v.size();
  };
  QaAccuracy acc;
  acc.visual = mean(visual_correct);
  acc.text = mean(text_correct);
  acc.weighted = (acc.visual + acc.text) / 2.0;
  return acc;
}

std::vector<SweepRow> retriever_sweep(const StoreBuilder& build,
                                      const std::vector<LabeledQuery>& queries,
                                      const std::vector<std::size_t>& ns,
                                      const std::vector<int>& ks, DistanceMode mode) {
  if (queries.empty()) throw Error(ErrorCode::kEmptyInput, "sweep needs queries");
  const int max_k = ks.empty() ? 0 : *std::max_element(ks.begin(), ks.end());
  std::vector<SweepRow> rows;
  for (std::size_t n : ns) {
    const SnapshotPtr snapshot = build(n);
    // Hit rank of each query's truth within its top max_k, or -1.
    std::vector<int> rank(queries.size(), -1);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      if (!snapshot->find_by_id(queries[q].truth_id)) {
        throw Error(ErrorCode::kUnknownTruth, "truth id " + queries[q].truth_id +
                                                  " not in store of size " + std::to_string(n));
      }
      if (max_k < 1) continue;
      const auto hits = knn(*snapshot, queries[q].embedding, max_k, mode);
      for (std::size_t i = 0; i < hits.size(); ++i) {
        if (hits[i].concept_id == queries[q].truth_id) {
          rank[q] = static_cast<int>(i);
          break;
        }
      }
    }
    for (int k : ks) {
      if (k < 1) throw Error(ErrorCode::kInvalidArgument, "sweep k must be >= 1");
      // knn(k) is a prefix of knn(max_k), so one search serves every k.
      const auto found = static_cast<std::size_t>(
          std::count_if(rank.begin(), rank.end(), [&](int r) { return r >= 0 && r < k; }));
      rows.push_back({n, k, static_cast<double>(found) / queries.size(),
                      static_cast<double>(found) / (static_cast<double>(k) * queries.size())});
    }
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = "N,K,recall,precision\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%d,%.6f,%.6f\n", r.n, r.k, r.recall, r.precision);
    out += buf;
  }
  return out;
}

SnapshotPtr SyntheticSweep::build(std::size_t n) const {
  if (n > concepts.size()) {
    throw Error(ErrorCode::kInvalidArgument, "sweep pool holds only " +
                                                 std::to_string(concepts.size()) + " concepts");
  }
  const int dim = concepts.empty() ? 1 : static_cast<int>(concepts.front().embedding.size());
  return std::make_shared<const StoreSnapshot>(
      dim, std::vector<ConceptRecord>(concepts.begin(),
                                      concepts.begin() + static_cast<std::ptrdiff_t>(n)));
}

SyntheticSweep make_synthetic_sweep(std::size_t pool, std::size_t query_concepts, int dim,
                                    double noise_sigma, std::uint64_t seed) {
  if (query_concepts > pool) {
    throw Error(ErrorCode::kInvalidArgument, "more query concepts than pool entries");
  }
  std::mt19937_64 rng(seed);
  auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto gaussian = [&] {
    // Box-Muller; keeps output identical across standard libraries.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  SyntheticSweep out;
  char id[32];
  for (std::size_t i = 0; i < pool; ++i) {
    std::snprintf(id, sizeof(id), "concept-%06zu", i);
    ConceptRecord r;
    r.id = id;
    r.name = "⟨" + r.id + "⟩";
    r.category = "object";
    r.embedding.resize(dim);
    for (int d = 0; d < dim; ++d) r.embedding(d) = static_cast<float>(2.0 * uniform() - 1.0);
    out.concepts.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < query_concepts; ++i) {
    EmbeddingVector q = out.concepts[i].embedding;
    for (int d = 0; d < dim; ++d) q(d) += static_cast<float>(noise_sigma * gaussian());
    out.queries.push_back({std::move(q), out.concepts[i].id});
  }
  return out;
}

TimingReport time_personalization(ConceptStore& store, Embedder& embedder, std::size_t n,
                                  const std::function<std::string(std::size_t)>& image_for) {
  using Clock = std::chrono::steady_clock;
  TimingReport report;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string image = image_for(i);
    const std::string name = "⟨timed-" + std::to_string(store.size()) + "⟩";
    const auto started = Clock::now();
    const EmbeddingVector e = embed_image(embedder, image, store.dim());
    store.add_concept(name, "object", "", "", e);
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - started).count();
    report.per_concept_ms.push_back(ms);
    report.total_ms += ms;
    report.cumulative_ms.push_back(report.total_ms);
  }
  return report;
}

json metrics_to_json(const MetricsReport& report) {
  json per_sample = json::array();
  for (const auto& c : report.per_sample) {
    per_sample.push_back({{"true_mentions", c.true_mentions},
                          {"total_gt", c.total_gt},
                          {"correct_names", c.correct_names},
                          {"total_names", c.total_names}});
  }
  return {{"recall", report.recall},
          {"precision", report.precision},
          {"f1", report.f1},
          {"counts",
           {{"true_mentions", report.counts.true_mentions},
            {"total_gt", report.counts.total_gt},
            {"correct_names", report.counts.correct_names},
            {"total_names", report.counts.total_names}}},
          {"per_sample", std::move(per_sample)}};
}

std::string metrics_to_csv(const std::vector<std::pair<std::string, double>>& rows) {
  std::string out = "metric,value\n";
  char buf[64];
  for (const auto& [metric, value] : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    out += metric + "," + buf + "\n";
  }
  return out;
}

}  // namespace persona
