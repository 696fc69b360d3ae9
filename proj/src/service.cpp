#include "persona/service.hpp"

#include "persona/json_io.hpp"
#include "persona/util.hpp"

#include <httplib.h>

namespace persona {

using nlohmann::json;

std::unique_ptr<Detector> make_detector(const EngineConfig& c,
                                        const std::shared_ptr<const FixtureSet>& fixtures) {
  if (c.detector == "whole") return std::make_unique<WholeImageDetector>();
  if (c.detector == "fixture") {
    if (!fixtures) throw Error(ErrorCode::kInvalidArgument, "fixture detector needs --fixtures");
    return std::make_unique<FixtureDetector>(fixtures);
  }
  if (c.detector.starts_with("http://") || c.detector.starts_with("https://")) {
    return std::make_unique<HttpDetector>(HttpEndpoint{c.detector, c.backend_timeout});
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown detector backend '" + c.detector + "'");
}

std::unique_ptr<Embedder> make_embedder(const EngineConfig& c,
                                        const std::shared_ptr<const FixtureSet>& fixtures) {
  if (c.embedder == "hash") return std::make_unique<HashEmbedder>(c.dim);
  if (c.embedder == "lookup") {
    if (!fixtures) throw Error(ErrorCode::kInvalidArgument, "lookup embedder needs --fixtures");
    return std::make_unique<LookupEmbedder>(fixtures);
  }
  if (c.embedder.starts_with("http://") || c.embedder.starts_with("https://")) {
    return std::make_unique<HttpEmbedder>(HttpEndpoint{c.embedder, c.backend_timeout});
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown embedder backend '" + c.embedder + "'");
}

std::unique_ptr<Generator> make_generator(const EngineConfig& c) {
  if (c.generator == "mock") return std::make_unique<MockGenerator>(c.delimiters);
  std::string url = c.generator;
  GeneratorFlavor flavor = GeneratorFlavor::kSegments;
  if (url.starts_with("openai+")) {
    flavor = GeneratorFlavor::kOpenAIChat;
    url = url.substr(7);
  }
  if (url.starts_with("http://") || url.starts_with("https://")) {
    return std::make_unique<HttpGenerator>(
        HttpGeneratorOptions{{url, c.backend_timeout}, flavor, "default", c.store_dir});
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown generator backend '" + c.generator + "'");
}

namespace {

std::string extension_for(const std::string& media_type) {
  if (media_type == "image/jpeg" || media_type == "image/jpg") return ".jpg";
  if (media_type == "image/x-portable-pixmap") return ".ppm";
  if (media_type == "image/png") return ".png";
  return ".img";
}

}  // namespace

Engine::Engine(EngineConfig config)
    : config_(std::move(config)),
      store_(StoreOptions{config_.dim, config_.delimiters, config_.id_seed, {}}) {
  std::shared_ptr<const FixtureSet> fixtures;
  if (config_.fixtures) {
    fixtures = std::make_shared<const FixtureSet>(FixtureSet::load(*config_.fixtures));
  }
  detector_ = make_detector(config_, fixtures);
  embedder_ = make_embedder(config_, fixtures);
  generator_ = make_generator(config_);
  pipeline_ = std::make_unique<Pipeline>(*detector_, *embedder_, *generator_, config_.pipeline);

  if (std::filesystem::exists(config_.store_dir / kManifestFile)) {
    store_.load(config_.store_dir);
  } else if (config_.flush_on_write) {
    store_.persist(config_.store_dir);
  }
}

Engine::~Engine() = default;

std::string Engine::save_image(const std::string& bytes, const std::string& media_type) {
  decode_image(bytes);
  const std::string ref = "images/" + sha256_hex(bytes).substr(0, 24) + extension_for(media_type);
  const auto path = config_.store_dir / ref;
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create image directory: " + ec.message());
  if (!std::filesystem::exists(path)) write_file_atomic(path, bytes);
  return ref;
}

void Engine::flush_locked() {
  if (config_.flush_on_write) store_.persist(config_.store_dir);
}

void Engine::flush() {
  std::lock_guard lock(write_mu_);
  store_.persist(config_.store_dir);
}

ConceptRecord Engine::add_concept(const ConceptInput& input) {
  store_.validate_name(input.name);
  std::lock_guard lock(write_mu_);
  if (store_.snapshot()->find_by_name(input.name)) {
    throw Error(ErrorCode::kDuplicateName, "concept " + input.name + " already exists");
  }
  EmbeddingVector embedding;
  if (input.embedding) {
    embedding = *input.embedding;
  } else if (input.image_bytes) {
    embedding = embed_image(*embedder_, *input.image_bytes, store_.dim());
  } else {
    throw Error(ErrorCode::kInvalidArgument, "a concept needs an image or an embedding");
  }
  if (embedding.size() != store_.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "embedding dim does not match store dim");
  }
  std::string image_ref = input.image_ref.value_or("");
  if (input.image_bytes) image_ref = save_image(*input.image_bytes, input.media_type);

  const SnapshotPtr before = store_.snapshot();
  ConceptRecord record =
      store_.add_concept(input.name, input.category, input.description, image_ref, embedding);
  try {
    flush_locked();
  } catch (...) {
    store_.reset(*before);
    throw;
  }
  return record;
}

ConceptRecord Engine::edit_concept(const std::string& id, const ConceptPatch& patch) {
  std::lock_guard lock(write_mu_);
  const SnapshotPtr before = store_.snapshot();
  ConceptUpdate update = patch.fields;
  if (patch.image_bytes) {
    if (!update.embedding) {
      update.embedding = embed_image(*embedder_, *patch.image_bytes, store_.dim());
    }
    update.image_ref = save_image(*patch.image_bytes, patch.media_type);
  }
  ConceptRecord after = store_.update_info(id, update);
  try {
    flush_locked();
  } catch (...) {
    store_.reset(*before);
    throw;
  }
  return after;
}

ConceptRecord Engine::remove_concept(const std::string& id) {
  std::lock_guard lock(write_mu_);
  const SnapshotPtr before = store_.snapshot();
  ConceptRecord removed = store_.remove_concept(id);
  try {
    flush_locked();
  } catch (...) {
    store_.reset(*before);
    throw;
  }
  return removed;
}

GenerationOutcome Engine::chat(const QueryInput& query) {
  return pipeline_->answer_query(store_, query);
}

std::vector<RetrievalHit> Engine::retrieve_image(const ImageInput& image, int k) {
  PipelineOptions options = config_.pipeline;
  options.retrieval.global_k = k;
  options.max_concepts.reset();
  Pipeline scoped(*detector_, *embedder_, *generator_, options);
  return scoped.retrieve_visual(*store_.snapshot(), image);
}

std::vector<RetrievalHit> Engine::retrieve_embedding(const EmbeddingVector& query, int k) {
  return knn(*store_.snapshot(), query, k, config_.pipeline.retrieval.distance_mode);
}

json Engine::backend_info() const {
  return {{"detector", config_.detector},
          {"embedder", config_.embedder},
          {"generator", config_.generator}};
}

json hits_to_json(const StoreSnapshot& snapshot, const std::vector<RetrievalHit>& hits) {
  json out = json::array();
  for (const auto& h : hits) {
    json entry = to_json(h);
    const ConceptRecord* r = snapshot.find_by_id(h.concept_id);
    entry["name"] = r ? json(r->name) : json(nullptr);
    out.push_back(std::move(entry));
  }
  return out;
}

json api_error_json(const Error& error) {
  json out = {{"code", api_code(error.code())}, {"message", error.what()}};
  if (error.stage()) out["stage"] = *error.stage();
  return out;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDuplicateName: return 409;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kDimensionMismatch: return 422;
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kMalformedResponse:
    case ErrorCode::kAnnotatorUnavailable: return 502;
    case ErrorCode::kCorruptManifest:
    case ErrorCode::kIoError: return 500;
    default: return 400;
  }
}

namespace {

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, const Error& e) {
  reply_json(res, http_status(e.code()), api_error_json(e));
}

// Runs a handler with uniform error mapping.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      reply_error(res, e);
    } catch (const json::exception& e) {
      reply_error(res, Error(ErrorCode::kInvalidArgument, std::string("bad request: ") + e.what()));
    } catch (const std::exception& e) {
      reply_json(res, 500, {{"code", "validation_failed"}, {"message", e.what()}});
    }
  };
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body.empty() ? std::string("{}") : req.body);
  if (!body.is_object()) throw Error(ErrorCode::kInvalidArgument, "request body must be an object");
  return body;
}

std::optional<std::string> opt_string(const json& body, const char* key) {
  if (!body.contains(key) || body[key].is_null()) return std::nullopt;
  if (!body[key].is_string()) {
    throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be a string");
  }
  return body[key].get<std::string>();
}

ConceptInput concept_input_from(const json& meta) {
  ConceptInput input;
  const auto name = opt_string(meta, "name");
  const auto category = opt_string(meta, "category");
  if (!name || !category) {
    throw Error(ErrorCode::kInvalidArgument, "name and category are required");
  }
  input.name = *name;
  input.category = *category;
  input.description = opt_string(meta, "description").value_or("");
  input.image_ref = opt_string(meta, "image_ref");
  if (auto b64 = opt_string(meta, "image_b64")) input.image_bytes = base64_decode(*b64);
  if (auto media = opt_string(meta, "media_type")) input.media_type = *media;
  if (meta.contains("embedding") && !meta["embedding"].is_null()) {
    input.embedding = embedding_from_json(meta["embedding"]);
  }
  return input;
}

int parse_k(const json& body, int fallback) {
  if (!body.contains("k") || body["k"].is_null()) return fallback;
  if (!body["k"].is_number_integer() || body["k"].get<int>() < 1) {
    throw Error(ErrorCode::kInvalidArgument, "k must be a positive integer");
  }
  return body["k"].get<int>();
}

}  // namespace

Service::Service(Engine& engine) : engine_(engine), server_(std::make_unique<httplib::Server>()) {
  routes();
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void Service::listen() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

bool Service::running() const { return server_->is_running(); }

void Service::routes() {
  auto& s = *server_;
  Engine& engine = engine_;

  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, PATCH, DELETE, OPTIONS"}});
  s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/health", guarded([&engine](const httplib::Request&, httplib::Response& res) {
    reply_json(res, 200,
               {{"status", "ok"},
                {"store_size", engine.store().size()},
                {"backends", engine.backend_info()}});
  }));

  s.Get("/categories", guarded([&engine](const httplib::Request&, httplib::Response& res) {
    reply_json(res, 200, engine.store().list_categories());
  }));

  s.Get("/concepts", guarded([&engine](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& r : engine.store().list()) out.push_back(to_json(r));
    reply_json(res, 200, out);
  }));

  s.Post("/concepts", guarded([&engine](const httplib::Request& req, httplib::Response& res) {
    ConceptInput input;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("meta")) {
        throw Error(ErrorCode::kInvalidArgument, "multipart upload needs a 'meta' part");
      }
      input = concept_input_from(json::parse(req.get_file_value("meta").content));
      if (req.has_file("image")) {
        const auto image = req.get_file_value("image");
        input.image_bytes = image.content;
        if (!image.content_type.empty()) input.media_type = image.content_type;
      }
    } else {
      input = concept_input_from(parse_body(req));
    }
    reply_json(res, 201, to_json(engine.add_concept(input)));
  }));

  s.Get(R"(/concepts/([^/]+))",
        guarded([&engine](const httplib::Request& req, httplib::Response& res) {
          reply_json(res, 200, to_json(engine.store().get_by_id(req.matches[1])));
        }));

  s.Patch(R"(/concepts/([^/]+))",
          guarded([&engine](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            ConceptPatch patch;
            patch.fields.name = opt_string(body, "name");
            patch.fields.description = opt_string(body, "description");
            patch.fields.category = opt_string(body, "category");
            patch.fields.image_ref = opt_string(body, "image_ref");
            if (body.contains("embedding") && !body["embedding"].is_null()) {
              patch.fields.embedding = embedding_from_json(body["embedding"]);
            }
            if (auto b64 = opt_string(body, "image_b64")) patch.image_bytes = base64_decode(*b64);
            if (auto media = opt_string(body, "media_type")) patch.media_type = *media;
            reply_json(res, 200, to_json(engine.edit_concept(req.matches[1], patch)));
          }));

  s.Delete(R"(/concepts/([^/]+))",
           guarded([&engine](const httplib::Request& req, httplib::Response& res) {
             reply_json(res, 200, to_json(engine.remove_concept(req.matches[1])));
           }));

  s.Post("/retrieve", guarded([&engine](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const int k = parse_k(body, engine.config().pipeline.retrieval.global_k);
    std::vector<RetrievalHit> hits;
    if (auto b64 = opt_string(body, "image_b64")) {
      hits = engine.retrieve_image({base64_decode(*b64), opt_string(body, "media_type").value_or("image/png")}, k);
    } else if (body.contains("embedding")) {
      hits = engine.retrieve_embedding(embedding_from_json(body["embedding"]), k);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "retrieve needs image_b64 or embedding");
    }
    reply_json(res, 200, {{"hits", hits_to_json(*engine.store().snapshot(), hits)}});
  }));

  s.Post("/chat", guarded([&engine](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    QueryInput query;
    query.text = opt_string(body, "text").value_or("");
    if (auto b64 = opt_string(body, "image_b64")) {
      query.image = ImageInput{base64_decode(*b64), opt_string(body, "media_type").value_or("image/png")};
    }
    reply_json(res, 200, outcome_to_json(engine.chat(query)));
  }));

  s.Get(R"(/images/([A-Za-z0-9._-]+))",
        guarded([&engine](const httplib::Request& req, httplib::Response& res) {
          const std::string file = req.matches[1];
          const auto path = engine.config().store_dir / "images" / file;
          if (file.find("..") != std::string::npos || !std::filesystem::is_regular_file(path)) {
            throw Error(ErrorCode::kNotFound, "no image " + file);
          }
          const std::string ext = path.extension().string();
          res.set_content(read_file(path), ext == ".png"   ? "image/png"
                                           : ext == ".jpg" ? "image/jpeg"
                                                           : "application/octet-stream");
        }));
}

}  // namespace persona
