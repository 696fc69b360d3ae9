// HTTP clients for the detector, embedder, and generator backends.

#include "persona/json_io.hpp"
#include "persona/perception.hpp"
#include "persona/pipeline.hpp"
#include "persona/util.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace persona {

using nlohmann::json;

namespace {

json post_json(const HttpEndpoint& endpoint, const std::string& path, const json& body) {
  const auto& url = endpoint.base_url;
  const auto scheme_end = url.find("://");
  const auto path_start =
      url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string host =
      path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Client client(host);
  if (!client.is_valid()) {
    throw Error(ErrorCode::kBackendUnavailable, "invalid backend url " + url);
  }
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  const auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  auto res = client.Post(prefix + path, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::kBackendUnavailable,
                url + path + ": " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::kBackendUnavailable,
                url + path + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedResponse, url + path + ": " + e.what());
  }
}

std::string inline_image(const std::string& ref,
                         const std::optional<std::filesystem::path>& root) {
  if (ref.starts_with("data:") || ref.starts_with("http://") || ref.starts_with("https://") ||
      !root) {
    return ref;
  }
  const std::filesystem::path path = std::filesystem::path(ref).is_absolute()
                                         ? std::filesystem::path(ref)
                                         : *root / ref;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) return ref;
  return "data:image/png;base64," + base64_encode(read_file(path));
}

}  // namespace

std::vector<RegionOfInterest> HttpDetector::propose(const ImageInput& image,
                                                    const std::vector<std::string>& classes) {
  const json reply = post_json(endpoint_, "/detect",
                               {{"image_b64", base64_encode(image.bytes)}, {"classes", classes}});
  if (!reply.is_object() || !reply.contains("regions") || !reply["regions"].is_array()) {
    throw Error(ErrorCode::kMalformedResponse, "detector reply has no regions array");
  }
  std::vector<RegionOfInterest> regions;
  for (const auto& r : reply["regions"]) regions.push_back(region_from_json(r));
  return regions;
}

EmbeddingVector HttpEmbedder::encode(const std::string& image_bytes) {
  const json reply =
      post_json(endpoint_, "/embed", {{"image_b64", base64_encode(image_bytes)}});
  if (!reply.is_object() || !reply.contains("embedding")) {
    throw Error(ErrorCode::kMalformedResponse, "embedder reply has no embedding");
  }
  try {
    return embedding_from_json(reply["embedding"]);
  } catch (const Error& e) {
    throw Error(ErrorCode::kMalformedResponse, e.what());
  }
}

json segments_request(const AugmentedPrompt& prompt) {
  return {{"segments", prompt_to_json(prompt)["segments"]}};
}

json openai_chat_request(const AugmentedPrompt& prompt, const std::string& model,
                         const std::optional<std::filesystem::path>& image_root) {
  json content = json::array();
  for (const auto& s : prompt.segments) {
    if (s.kind == PromptSegment::Kind::kImageRef) {
      content.push_back(
          {{"type", "image_url"}, {"image_url", {{"url", inline_image(s.payload, image_root)}}}});
    } else {
      content.push_back({{"type", "text"}, {"text", s.payload}});
    }
  }
  return {{"model", model},
          {"messages", json::array({{{"role", "user"}, {"content", std::move(content)}}})}};
}

std::string HttpGenerator::generate(const AugmentedPrompt& prompt) {
  if (options_.flavor == GeneratorFlavor::kSegments) {
    const json reply = post_json(options_.endpoint, "/generate", segments_request(prompt));
    if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
      throw Error(ErrorCode::kMalformedResponse, "generator reply has no text");
    }
    return reply["text"].get<std::string>();
  }
  const json reply =
      post_json(options_.endpoint, "/v1/chat/completions",
                openai_chat_request(prompt, options_.model, options_.image_root));
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedResponse, std::string("chat reply: ") + e.what());
  }
}

}  // namespace persona
