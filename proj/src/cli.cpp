#include "persona/cli.hpp"

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "persona/datagen.hpp"
#include "persona/eval.hpp"
#include "persona/json_io.hpp"
#include "persona/service.hpp"
#include "persona/util.hpp"

namespace persona {

using nlohmann::json;

namespace {

struct GlobalFlags {
  std::string store = "store";
  int dim = kDefaultDim;
  std::string detector = "whole";
  std::string embedder = "hash";
  std::string generator = "mock";
  std::string fixtures;
  int per_region_k = 2;
  int global_k = 2;
  bool cosine = false;
  std::optional<double> max_distance;
  int timeout_ms = 5000;
};

EngineConfig engine_config(const GlobalFlags& g) {
  EngineConfig c;
  c.store_dir = g.store;
  c.dim = g.dim;
  c.detector = g.detector;
  c.embedder = g.embedder;
  c.generator = g.generator;
  if (!g.fixtures.empty()) c.fixtures = g.fixtures;
  c.backend_timeout = std::chrono::milliseconds(g.timeout_ms);
  c.pipeline.retrieval.per_region_k = g.per_region_k;
  c.pipeline.retrieval.global_k = g.global_k;
  c.pipeline.retrieval.distance_mode = g.cosine ? DistanceMode::kCosine : DistanceMode::kEuclidean;
  c.pipeline.retrieval.max_distance = g.max_distance;
  return c;
}

std::string media_type_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "image/png";
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_metrics(const std::string& out_dir, const json& metrics,
                   const std::vector<std::pair<std::string, double>>& rows) {
  if (out_dir.empty()) return;
  std::filesystem::create_directories(out_dir);
  write_file_atomic(std::filesystem::path(out_dir) / "metrics.json", metrics.dump(2) + "\n");
  write_file_atomic(std::filesystem::path(out_dir) / "metrics.csv", metrics_to_csv(rows));
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 1) {
      throw Error(ErrorCode::kInvalidArgument, "bad list entry '" + item + "'");
    }
    out.push_back(static_cast<T>(v));
  }
  return out;
}

Split split_of(const json& row) {
  if (row.contains("split")) {
    const auto s = row.at("split").get<std::string>();
    if (s == "positive") return Split::kPositive;
    if (s == "negative") return Split::kNegative;
    throw Error(ErrorCode::kInvalidArgument, "split must be positive or negative");
  }
  return row.at("expected_yes").get<bool>() ? Split::kPositive : Split::kNegative;
}

// Small deterministic PNG per index, used as the timing workload.
std::string timing_image(std::size_t i) {
  Image img(16, 16, 3);
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    img.pixels[p] = static_cast<std::uint8_t>((p * 31 + i * 7) & 0xff);
  }
  return encode_png(img);
}

int serve(Engine& engine, const std::string& host, int port) {
  // Block termination signals in every thread; one waiter turns them into
  // a clean stop.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Service service(engine);
  const int bound = service.bind(host, port);
  std::cout << json{{"listening", host + ":" + std::to_string(bound)}}.dump() << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    service.stop();
  });
  service.listen();
  // listen() also returns on its own errors; release the waiter either way.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  engine.flush();
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Personal concept store, retrieval-augmented chat, datagen and evaluation"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--store", g.store, "Store directory")->capture_default_str();
  app.add_option("--dim", g.dim, "Embedding dimension")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--detector", g.detector, "whole | fixture | http://...")->capture_default_str();
  app.add_option("--embedder", g.embedder, "hash | lookup | http://...")->capture_default_str();
  app.add_option("--generator", g.generator, "mock | http://... | openai+http://...")->capture_default_str();
  app.add_option("--fixtures", g.fixtures, "Fixture file for fixture/lookup backends");
  app.add_option("--per-region-k", g.per_region_k)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--global-k", g.global_k)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--cosine", g.cosine, "Cosine instead of euclidean distance");
  app.add_option("--max-distance", g.max_distance, "Drop hits farther than this");
  app.add_option("--timeout-ms", g.timeout_ms, "Remote backend timeout")->capture_default_str();

  std::function<int()> action;

  // concept
  auto* concept_cmd = app.add_subcommand("concept", "Manage stored concepts");
  concept_cmd->require_subcommand(1);

  struct {
    std::string name, category, desc, image, embedding;
  } add;
  auto* add_cmd = concept_cmd->add_subcommand("add", "Add a concept; prints its id");
  add_cmd->add_option("--name", add.name, "Delimited name, e.g. ⟨my dog⟩")->required();
  add_cmd->add_option("--category", add.category)->required();
  add_cmd->add_option("--desc", add.desc);
  auto* add_image = add_cmd->add_option("--image", add.image)->check(CLI::ExistingFile);
  auto* add_emb = add_cmd->add_option("--embedding", add.embedding, "JSON array");
  add_image->excludes(add_emb);
  add_cmd->callback([&] {
    action = [&] {
      Engine engine(engine_config(g));
      ConceptInput input;
      input.name = add.name;
      input.category = add.category;
      input.description = add.desc;
      if (!add.image.empty()) {
        input.image_bytes = read_file(add.image);
        input.media_type = media_type_for(add.image);
      } else if (!add.embedding.empty()) {
        input.embedding = embedding_from_json(json::parse(add.embedding));
      } else {
        throw Error(ErrorCode::kInvalidArgument, "concept add needs --image or --embedding");
      }
      std::cout << engine.add_concept(input).id << "\n";
      return 0;
    };
  });

  struct {
    std::string id;
    std::optional<std::string> name, category, desc;
    std::string image;
  } edit;
  auto* edit_cmd = concept_cmd->add_subcommand("edit", "Edit fields of a concept");
  edit_cmd->add_option("id", edit.id)->required();
  edit_cmd->add_option("--name", edit.name);
  edit_cmd->add_option("--category", edit.category);
  edit_cmd->add_option("--desc", edit.desc);
  edit_cmd->add_option("--image", edit.image)->check(CLI::ExistingFile);
  edit_cmd->callback([&] {
    action = [&] {
      Engine engine(engine_config(g));
      ConceptPatch patch;
      patch.fields.name = edit.name;
      patch.fields.category = edit.category;
      patch.fields.description = edit.desc;
      if (!edit.image.empty()) {
        patch.image_bytes = read_file(edit.image);
        patch.media_type = media_type_for(edit.image);
      }
      std::cout << to_json(engine.edit_concept(edit.id, patch)).dump() << "\n";
      return 0;
    };
  });

  std::string rm_id;
  auto* rm_cmd = concept_cmd->add_subcommand("rm", "Remove a concept");
  rm_cmd->add_option("id", rm_id)->required();
  rm_cmd->callback([&] {
    action = [&] {
      Engine engine(engine_config(g));
      engine.remove_concept(rm_id);
      return 0;
    };
  });

  auto* list_cmd = concept_cmd->add_subcommand("list", "Print all concepts as JSON");
  list_cmd->callback([&] {
    action = [&] {
      Engine engine(engine_config(g));
      json out = json::array();
      for (const auto& r : engine.store().list()) out.push_back(to_json(r));
      std::cout << out.dump(2) << "\n";
      return 0;
    };
  });

  // chat
  struct {
    std::string image, text;
    bool timing = false;
  } chat;
  auto* chat_cmd = app.add_subcommand("chat", "Answer a query against the store");
  chat_cmd->add_option("--image", chat.image)->check(CLI::ExistingFile);
  chat_cmd->add_option("--text", chat.text);
  chat_cmd->add_flag("--timing", chat.timing, "Include stage timings");
  chat_cmd->callback([&] {
    action = [&] {
      Engine engine(engine_config(g));
      QueryInput query;
      query.text = chat.text;
      if (!chat.image.empty()) {
        query.image = ImageInput{read_file(chat.image), media_type_for(chat.image)};
      }
      std::cout << outcome_to_json(engine.chat(query), chat.timing).dump(2) << "\n";
      return 0;
    };
  });

  // retrieve
  struct {
    std::string image, embedding;
    int k = 2;
  } ret;
  auto* ret_cmd = app.add_subcommand("retrieve", "Nearest stored concepts for an image or vector");
  auto* ret_image = ret_cmd->add_option("--image", ret.image)->check(CLI::ExistingFile);
  auto* ret_emb = ret_cmd->add_option("--embedding", ret.embedding, "JSON array");
  ret_image->excludes(ret_emb);
  ret_cmd->add_option("--k", ret.k)->capture_default_str()->check(CLI::PositiveNumber);
  ret_cmd->callback([&] {
    action = [&] {
      Engine engine(engine_config(g));
      std::vector<RetrievalHit> hits;
      if (!ret.image.empty()) {
        hits = engine.retrieve_image({read_file(ret.image), media_type_for(ret.image)}, ret.k);
      } else if (!ret.embedding.empty()) {
        hits = engine.retrieve_embedding(embedding_from_json(json::parse(ret.embedding)), ret.k);
      } else {
        throw Error(ErrorCode::kInvalidArgument, "retrieve needs --image or --embedding");
      }
      std::cout << json{{"hits", hits_to_json(*engine.store().snapshot(), hits)}}.dump(2) << "\n";
      return 0;
    };
  });

  // datagen
  struct {
    std::string corpus, root, annotations, out, templates;
    std::size_t records = 1000;
    std::uint64_t seed = 0;
    double negative_ratio = 0.3;
    std::size_t negatives = 1;
    bool no_augment = false;
  } dg;
  auto* dg_cmd = app.add_subcommand("datagen", "Synthesize training records from an annotated corpus");
  dg_cmd->add_option("--corpus", dg.corpus, "JSONL of annotated samples")->required()->check(CLI::ExistingFile);
  dg_cmd->add_option("--root", dg.root, "Image directory (default: corpus directory)");
  dg_cmd->add_option("--annotations", dg.annotations, "Annotation file for text targets");
  dg_cmd->add_option("--templates", dg.templates, "Template bank (default: bundled)");
  dg_cmd->add_option("--out", dg.out)->required();
  dg_cmd->add_option("--records", dg.records)->capture_default_str();
  dg_cmd->add_option("--seed", dg.seed)->capture_default_str();
  dg_cmd->add_option("--negative-ratio", dg.negative_ratio)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  dg_cmd->add_option("--negatives", dg.negatives, "Noise concepts per injected record")->capture_default_str();
  dg_cmd->add_flag("--no-augment", dg.no_augment);
  dg_cmd->callback([&] {
    action = [&] {
      const auto corpus = parse_corpus(read_file(dg.corpus));
      const std::filesystem::path root =
          dg.root.empty() ? std::filesystem::path(dg.corpus).parent_path() : std::filesystem::path(dg.root);
      const TemplateBank bank = dg.templates.empty() ? TemplateBank::load_default() : TemplateBank::load(dg.templates);
      std::unique_ptr<Annotator> annotator;
      if (dg.annotations.empty()) {
        annotator = std::make_unique<UnconfiguredAnnotator>();
      } else {
        annotator = std::make_unique<FileAnnotator>(FileAnnotator::load(dg.annotations));
      }
      DatagenConfig config;
      config.records = dg.records;
      config.seed = dg.seed;
      config.negative_ratio = dg.negative_ratio;
      config.negatives_per_record = dg.negatives;
      config.augment = !dg.no_augment;
      const auto dataset = generate_dataset(corpus, directory_loader(root), *annotator, bank, config);
      write_dataset(dataset, dg.out);
      std::cout << json(dataset.stats).dump(2) << "\n";
      return 0;
    };
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Compute personalization metrics");
  eval_cmd->require_subcommand(1);
  std::string eval_input, eval_out;

  auto* ev_cap = eval_cmd->add_subcommand(
      "captions", "JSONL {\"caption\", \"ground_truth\": [names]} -> recall/precision/F1");
  ev_cap->add_option("--input", eval_input)->required()->check(CLI::ExistingFile);
  ev_cap->add_option("--out", eval_out, "Directory for metrics.json and metrics.csv");
  ev_cap->callback([&] {
    action = [&] {
      std::vector<CaptionSample> samples;
      std::set<std::string> known;
      for (const auto& row : read_jsonl(eval_input)) {
        CaptionSample s;
        s.generated_caption = row.at("caption").get<std::string>();
        for (const auto& n : row.at("ground_truth")) s.ground_truth.insert(n.get<std::string>());
        known.insert(s.ground_truth.begin(), s.ground_truth.end());
        samples.push_back(std::move(s));
      }
      // Names in the store are known too, so hallucinations can be told apart
      // from stored-but-absent concepts in per-sample output.
      if (std::filesystem::exists(std::filesystem::path(g.store) / kManifestFile)) {
        ConceptStore store(StoreOptions{g.dim, {}, {}, {}});
        store.load(g.store);
        for (const auto& r : store.list()) known.insert(r.name);
      }
      const auto report = caption_metrics(samples, known);
      const json metrics = metrics_to_json(report);
      write_metrics(eval_out, metrics,
                    {{"recall", report.recall}, {"precision", report.precision}, {"f1", report.f1}});
      std::cout << metrics.dump(2) << "\n";
      return 0;
    };
  });

  auto* ev_rec = eval_cmd->add_subcommand(
      "recognition", "JSONL {\"reply\", \"expected_yes\", \"split\"?} -> split accuracies");
  ev_rec->add_option("--input", eval_input)->required()->check(CLI::ExistingFile);
  ev_rec->add_option("--out", eval_out);
  ev_rec->callback([&] {
    action = [&] {
      std::vector<BinaryResult> results;
      std::size_t unparsed = 0;
      for (const auto& row : read_jsonl(eval_input)) {
        const Answer a = parse_answer(row.at("reply").get<std::string>());
        unparsed += a == Answer::kUnknown;
        results.push_back({a == Answer::kYes, row.at("expected_yes").get<bool>(), split_of(row)});
      }
      const auto acc = binary_accuracy(results);
      const json metrics = {{"positive", acc.positive},
                            {"negative", acc.negative},
                            {"weighted", acc.weighted},
                            {"unparsed_replies", unparsed}};
      write_metrics(eval_out, metrics,
                    {{"positive", acc.positive}, {"negative", acc.negative}, {"weighted", acc.weighted}});
      std::cout << metrics.dump(2) << "\n";
      return 0;
    };
  });

  auto* ev_qa = eval_cmd->add_subcommand(
      "qa", "JSONL {\"kind\": visual|text, \"correct\"} or {\"kind\", \"reply\", \"answer\"}");
  ev_qa->add_option("--input", eval_input)->required()->check(CLI::ExistingFile);
  ev_qa->add_option("--out", eval_out);
  ev_qa->callback([&] {
    action = [&] {
      std::vector<bool> visual, text;
      for (const auto& row : read_jsonl(eval_input)) {
        bool ok = false;
        if (row.contains("correct")) {
          ok = row.at("correct").get<bool>();
        } else {
          const Answer got = parse_answer(row.at("reply").get<std::string>());
          ok = got != Answer::kUnknown && got == parse_answer(row.at("answer").get<std::string>());
        }
        const auto kind = row.at("kind").get<std::string>();
        if (kind == "visual") {
          visual.push_back(ok);
        } else if (kind == "text") {
          text.push_back(ok);
        } else {
          throw Error(ErrorCode::kInvalidArgument, "qa kind must be visual or text");
        }
      }
      const auto acc = qa_accuracy(visual, text);
      const json metrics = {{"visual", acc.visual}, {"text", acc.text}, {"weighted", acc.weighted}};
      write_metrics(eval_out, metrics,
                    {{"visual", acc.visual}, {"text", acc.text}, {"weighted", acc.weighted}});
      std::cout << metrics.dump(2) << "\n";
      return 0;
    };
  });

  struct {
    std::string ns = "50,100,300,500", ks = "1,2,5";
    std::size_t queries = 50;
    int dim = 16;
    double noise = 0.5;
    std::uint64_t seed = 7;
  } sw;
  auto* ev_sweep = eval_cmd->add_subcommand(
      "sweep", "Top-K recall over store sizes; synthetic keys, or the store with --input queries");
  ev_sweep->add_option("--input", eval_input, "JSONL {\"embedding\", \"truth_id\"} against --store");
  ev_sweep->add_option("--out", eval_out, "Directory for sweep.csv");
  ev_sweep->add_option("--ns", sw.ns)->capture_default_str();
  ev_sweep->add_option("--ks", sw.ks)->capture_default_str();
  ev_sweep->add_option("--queries", sw.queries, "Synthetic query count")->capture_default_str();
  ev_sweep->add_option("--sweep-dim", sw.dim, "Synthetic key dimension")->capture_default_str();
  ev_sweep->add_option("--noise", sw.noise, "Synthetic query noise sigma")->capture_default_str();
  ev_sweep->add_option("--seed", sw.seed)->capture_default_str();
  ev_sweep->callback([&] {
    action = [&] {
      const auto ns = parse_list<std::size_t>(sw.ns);
      const auto ks = parse_list<int>(sw.ks);
      const auto mode = g.cosine ? DistanceMode::kCosine : DistanceMode::kEuclidean;
      std::vector<SweepRow> rows;
      if (eval_input.empty()) {
        const std::size_t pool = *std::max_element(ns.begin(), ns.end());
        const auto data = make_synthetic_sweep(pool, std::min(sw.queries, ns.front()), sw.dim, sw.noise, sw.seed);
        rows = retriever_sweep([&](std::size_t n) { return data.build(n); }, data.queries, ns, ks, mode);
      } else {
        ConceptStore store(StoreOptions{g.dim, {}, {}, {}});
        store.load(g.store);
        const auto all = store.list();
        std::vector<LabeledQuery> queries;
        for (const auto& row : read_jsonl(eval_input)) {
          queries.push_back({embedding_from_json(row.at("embedding")), row.at("truth_id").get<std::string>()});
        }
        auto build = [&](std::size_t n) {
          if (n > all.size()) {
            throw Error(ErrorCode::kInvalidArgument, "store holds only " + std::to_string(all.size()) + " concepts");
          }
          return std::make_shared<const StoreSnapshot>(
              store.dim(), std::vector<ConceptRecord>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)));
        };
        rows = retriever_sweep(build, queries, ns, ks, mode);
      }
      const std::string csv = sweep_to_csv(rows);
      if (!eval_out.empty()) {
        std::filesystem::create_directories(eval_out);
        write_file_atomic(std::filesystem::path(eval_out) / "sweep.csv", csv);
      }
      std::cout << csv;
      return 0;
    };
  });

  std::size_t timing_n = 100;
  auto* ev_timing = eval_cmd->add_subcommand("timing", "Per-concept personalization cost");
  ev_timing->add_option("--n", timing_n)->capture_default_str();
  ev_timing->add_option("--out", eval_out);
  ev_timing->callback([&] {
    action = [&] {
      const EngineConfig config = engine_config(g);
      std::shared_ptr<const FixtureSet> fixtures;
      if (config.fixtures) fixtures = std::make_shared<const FixtureSet>(FixtureSet::load(*config.fixtures));
      auto embedder = make_embedder(config, fixtures);
      ConceptStore store(StoreOptions{g.dim, {}, {}, {}});
      const auto report = time_personalization(store, *embedder, timing_n, timing_image);
      const double max_ms = report.per_concept_ms.empty()
                                ? 0.0
                                : *std::max_element(report.per_concept_ms.begin(), report.per_concept_ms.end());
      const json metrics = {{"per_concept_ms", report.per_concept_ms},
                            {"cumulative_ms", report.cumulative_ms},
                            {"total_ms", report.total_ms},
                            {"max_ms", max_ms}};
      write_metrics(eval_out, metrics, {{"total_ms", report.total_ms}, {"max_ms", max_ms}});
      std::cout << metrics.dump(2) << "\n";
      return 0;
    };
  });

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Run the REST API");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port, "0 picks a free port")->capture_default_str()->check(CLI::Range(0, 65535));
  serve_cmd->callback([&] {
    action = [&] {
      Engine engine(engine_config(g));
      return serve(engine, host, port);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return action ? action() : 2;
  } catch (const Error& e) {
    std::cerr << api_error_json(e).dump() << "\n";
  } catch (const json::exception& e) {
    std::cerr << api_error_json(Error(ErrorCode::kInvalidArgument, e.what())).dump() << "\n";
  } catch (const std::exception& e) {
    std::cerr << api_error_json(Error(ErrorCode::kIoError, e.what())).dump() << "\n";
  }
  return 1;
}

}  // namespace persona
