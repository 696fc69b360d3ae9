#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "persona/concept_store.hpp"
#include "persona/perception.hpp"
#include "persona/pipeline.hpp"

namespace httplib {
class Server;
}

namespace persona {

// Backend specs:
//   detector:  "whole" | "fixture" | "http://host:port[/prefix]"
//   embedder:  "hash" | "lookup" | "http://..."
//   generator: "mock" | "http://..." | "openai+http://..."
// "fixture" and "lookup" read the file named by `fixtures`.
struct EngineConfig {
  std::filesystem::path store_dir = "store";
  int dim = kDefaultDim;
  NameDelimiters delimiters;
  std::string detector = "whole";
  std::string embedder = "hash";
  std::string generator = "mock";
  std::optional<std::filesystem::path> fixtures;
  std::chrono::milliseconds backend_timeout{5000};
  PipelineOptions pipeline;
  // Persist after every successful mutation.
  bool flush_on_write = true;
  std::optional<std::uint64_t> id_seed;
};

struct ConceptInput {
  std::string name;
  std::string category;
  std::string description;
  std::optional<std::string> image_bytes;
  std::string media_type = "image/png";
  std::optional<std::string> image_ref;      // used when no bytes are uploaded
  std::optional<EmbeddingVector> embedding;  // skips the embedder when set
};

struct ConceptPatch {
  ConceptUpdate fields;
  std::optional<std::string> image_bytes;
  std::string media_type = "image/png";
};

std::unique_ptr<Detector> make_detector(const EngineConfig& config,
                                        const std::shared_ptr<const FixtureSet>& fixtures);
std::unique_ptr<Embedder> make_embedder(const EngineConfig& config,
                                        const std::shared_ptr<const FixtureSet>& fixtures);
std::unique_ptr<Generator> make_generator(const EngineConfig& config);

// Store + backends + pipeline. Mutations are serialized and atomic: a
// failure anywhere leaves the store as it was.
class Engine {
 public:
  explicit Engine(EngineConfig config);
  ~Engine();

  ConceptStore& store() { return store_; }
  const ConceptStore& store() const { return store_; }
  Pipeline& pipeline() { return *pipeline_; }
  Embedder& embedder() { return *embedder_; }
  const EngineConfig& config() const { return config_; }

  ConceptRecord add_concept(const ConceptInput& input);
  ConceptRecord edit_concept(const std::string& id, const ConceptPatch& patch);
  ConceptRecord remove_concept(const std::string& id);

  GenerationOutcome chat(const QueryInput& query);
  // Image: full visual path with global_k = k. Embedding: plain knn.
  std::vector<RetrievalHit> retrieve_image(const ImageInput& image, int k);
  std::vector<RetrievalHit> retrieve_embedding(const EmbeddingVector& query, int k);

  void flush();
  nlohmann::json backend_info() const;

 private:
  std::string save_image(const std::string& bytes, const std::string& media_type);
  void flush_locked();

  EngineConfig config_;
  ConceptStore store_;
  std::unique_ptr<Detector> detector_;
  std::unique_ptr<Embedder> embedder_;
  std::unique_ptr<Generator> generator_;
  std::unique_ptr<Pipeline> pipeline_;
  std::mutex write_mu_;
};

// Hits with the concept name attached (null when the id is gone).
nlohmann::json hits_to_json(const StoreSnapshot& snapshot, const std::vector<RetrievalHit>& hits);

// {"code", "message", "stage"?}
nlohmann::json api_error_json(const Error& error);
int http_status(ErrorCode code);

class Service {
 public:
  explicit Service(Engine& engine);
  ~Service();

  // Binds; port 0 picks a free port. Throws IoError (BindError) on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();
  // True once listen() is accepting connections.
  bool running() const;

 private:
  void routes();

  Engine& engine_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace persona
