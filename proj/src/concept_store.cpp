#include "persona/concept_store.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <set>

#include "persona/util.hpp"

namespace persona {

using nlohmann::json;

bool operator==(const ConceptRecord& a, const ConceptRecord& b) {
  return a.id == b.id && a.name == b.name && a.category == b.category &&
         a.description == b.description && a.image_ref == b.image_ref &&
         a.created_at == b.created_at && a.updated_at == b.updated_at &&
         a.embedding.size() == b.embedding.size() &&
         std::equal(a.embedding.data(), a.embedding.data() + a.embedding.size(),
                    b.embedding.data(), [](float x, float y) {
                      return std::bit_cast<std::uint32_t>(x) ==
                             std::bit_cast<std::uint32_t>(y);
                    });
}

StoreSnapshot::StoreSnapshot(int dim, std::vector<ConceptRecord> records)
    : dim_(dim), records_(std::move(records)),
      matrix_(static_cast<Eigen::Index>(records_.size()), dim) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    matrix_.row(static_cast<Eigen::Index>(i)) = records_[i].embedding.transpose();
    by_id_.emplace(records_[i].id, i);
    by_name_.emplace(records_[i].name, i);
  }
}

const ConceptRecord* StoreSnapshot::find_by_id(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const ConceptRecord* StoreSnapshot::find_by_name(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &records_[it->second];
}

ConceptStore::ConceptStore(StoreOptions options) : options_(std::move(options)) {
  if (options_.dim <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "store dim must be positive");
  }
  if (options_.delimiters.open.empty() || options_.delimiters.close.empty() ||
      options_.delimiters.open == options_.delimiters.close) {
    throw Error(ErrorCode::kInvalidArgument,
                "name delimiters must be a distinct non-empty pair");
  }
  id_rng_.seed(options_.id_seed ? *options_.id_seed : std::random_device{}());
}

std::string ConceptStore::next_id() {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id;
  for (;;) {
    id.clear();
    for (int word = 0; word < 2; ++word) {
      std::uint64_t bits = id_rng_();
      for (int i = 0; i < 16; ++i) {
        id.push_back(kHex[(bits >> (60 - 4 * i)) & 0xF]);
      }
    }
    if (!by_id_.contains(id)) return id;
  }
}

std::int64_t ConceptStore::now() const {
  return options_.clock ? options_.clock() : now_ms();
}

void ConceptStore::validate_name(const std::string& name) const {
  const auto& open = options_.delimiters.open;
  const auto& close = options_.delimiters.close;
  const bool wrapped = name.size() > open.size() + close.size() &&
                       name.starts_with(open) && name.ends_with(close);
  if (!wrapped) {
    throw Error(ErrorCode::kInvalidArgument,
                "concept name must look like " + open + "name" + close + ", got '" +
                    name + "'");
  }
  const std::string inner =
      name.substr(open.size(), name.size() - open.size() - close.size());
  if (inner.find(open) != std::string::npos || inner.find(close) != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "concept name contains nested delimiters");
  }
}

std::size_t ConceptStore::slot_of(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) {
    throw Error(ErrorCode::kNotFound, "no concept with id " + id);
  }
  return it->second;
}

ConceptRecord ConceptStore::add_concept(const std::string& name,
                                        const std::string& category,
                                        const std::string& description,
                                        const std::string& image_ref,
                                        const EmbeddingVector& embedding) {
  validate_name(name);
  check_embedding(embedding);
  if (embedding.size() != options_.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "embedding dim " + std::to_string(embedding.size()) +
                    " does not match store dim " + std::to_string(options_.dim));
  }
  std::lock_guard lock(mu_);
  if (by_name_.contains(name)) {
    throw Error(ErrorCode::kDuplicateName, "concept " + name + " already exists");
  }
  ConceptRecord record{next_id(), name, category, description, image_ref, embedding,
                       0, 0};
  record.created_at = record.updated_at = now();
  slots_.push_back({record, true});
  by_id_.emplace(record.id, slots_.size() - 1);
  by_name_.emplace(record.name, slots_.size() - 1);
  ++alive_;
  cached_.reset();
  return record;
}

ConceptRecord ConceptStore::update_info(const std::string& id,
                                        const ConceptUpdate& update) {
  if (update.name) validate_name(*update.name);
  if (update.embedding) {
    check_embedding(*update.embedding);
    if (update.embedding->size() != options_.dim) {
      throw Error(ErrorCode::kDimensionMismatch, "embedding dim does not match store dim");
    }
  }
  std::lock_guard lock(mu_);
  const std::size_t slot = slot_of(id);
  ConceptRecord& record = slots_[slot].record;
  if (update.name && *update.name != record.name) {
    if (by_name_.contains(*update.name)) {
      throw Error(ErrorCode::kDuplicateName, "concept " + *update.name + " already exists");
    }
    by_name_.erase(record.name);
    by_name_.emplace(*update.name, slot);
    record.name = *update.name;
  }
  if (update.description) record.description = *update.description;
  if (update.category) record.category = *update.category;
  if (update.image_ref) record.image_ref = *update.image_ref;
  if (update.embedding) record.embedding = *update.embedding;
  record.updated_at = std::max(now(), record.created_at);
  cached_.reset();
  return record;
}

ConceptRecord ConceptStore::remove_concept(const std::string& id) {
  std::lock_guard lock(mu_);
  const std::size_t slot = slot_of(id);
  ConceptRecord removed = slots_[slot].record;
  slots_[slot].alive = false;
  by_id_.erase(removed.id);
  by_name_.erase(removed.name);
  --alive_;
  cached_.reset();
  compact_if_sparse();
  return removed;
}

void ConceptStore::restore(const ConceptRecord& record) {
  validate_name(record.name);
  check_embedding(record.embedding);
  if (record.embedding.size() != options_.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "embedding dim does not match store dim");
  }
  std::lock_guard lock(mu_);
  if (by_id_.contains(record.id)) {
    throw Error(ErrorCode::kInvalidArgument, "id " + record.id + " already present");
  }
  if (by_name_.contains(record.name)) {
    throw Error(ErrorCode::kDuplicateName, "concept " + record.name + " already exists");
  }
  slots_.push_back({record, true});
  by_id_.emplace(record.id, slots_.size() - 1);
  by_name_.emplace(record.name, slots_.size() - 1);
  ++alive_;
  cached_.reset();
}

void ConceptStore::reset(const StoreSnapshot& snapshot) {
  if (snapshot.dim() != options_.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "snapshot dim does not match store dim");
  }
  std::lock_guard lock(mu_);
  slots_.clear();
  for (const auto& r : snapshot.records()) slots_.push_back({r, true});
  alive_ = slots_.size();
  rebuild_indices();
  cached_.reset();
}

void ConceptStore::compact_if_sparse() {
  if (slots_.size() < 64 || alive_ * 2 > slots_.size()) return;
  std::erase_if(slots_, [](const Slot& s) { return !s.alive; });
  rebuild_indices();
}

void ConceptStore::rebuild_indices() {
  by_id_.clear();
  by_name_.clear();
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!slots_[i].alive) continue;
    by_id_.emplace(slots_[i].record.id, i);
    by_name_.emplace(slots_[i].record.name, i);
  }
}

ConceptRecord ConceptStore::get_by_name(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw Error(ErrorCode::kNotFound, "no concept named '" + name + "'");
  }
  return slots_[it->second].record;
}

ConceptRecord ConceptStore::get_by_id(const std::string& id) const {
  std::lock_guard lock(mu_);
  return slots_[slot_of(id)].record;
}

std::vector<std::string> ConceptStore::list_categories() const {
  std::lock_guard lock(mu_);
  std::set<std::string> categories;
  for (const auto& slot : slots_) {
    if (slot.alive) categories.insert(slot.record.category);
  }
  return {categories.begin(), categories.end()};
}

std::vector<ConceptRecord> ConceptStore::list() const {
  return snapshot()->records();
}

std::size_t ConceptStore::size() const {
  std::lock_guard lock(mu_);
  return alive_;
}

SnapshotPtr ConceptStore::snapshot() const {
  std::lock_guard lock(mu_);
  if (!cached_) {
    std::vector<ConceptRecord> records;
    records.reserve(alive_);
    for (const auto& slot : slots_) {
      if (slot.alive) records.push_back(slot.record);
    }
    cached_ = std::make_shared<const StoreSnapshot>(options_.dim, std::move(records));
  }
  return cached_;
}

std::string manifest_to_json(const StoreManifest& manifest,
                             const std::string& vectors_sha256) {
  json records = json::array();
  for (const auto& r : manifest.records) {
    records.push_back({{"id", r.id},
                       {"name", r.name},
                       {"category", r.category},
                       {"description", r.description},
                       {"image_ref", r.image_ref},
                       {"created_at", r.created_at},
                       {"updated_at", r.updated_at}});
  }
  json doc = {{"version", manifest.version},
              {"dim", manifest.dim},
              {"records", std::move(records)},
              {"vectors_sha256", vectors_sha256}};
  return doc.dump(2) + "\n";
}

StoreManifest manifest_from_json(const std::string& text, std::string* vectors_sha256) {
  StoreManifest manifest;
  try {
    const json doc = json::parse(text);
    manifest.version = doc.at("version").get<int>();
    manifest.dim = doc.at("dim").get<int>();
    for (const auto& r : doc.at("records")) {
      manifest.records.push_back({r.at("id").get<std::string>(),
                                  r.at("name").get<std::string>(),
                                  r.at("category").get<std::string>(),
                                  r.value("description", std::string{}),
                                  r.value("image_ref", std::string{}),
                                  r.at("created_at").get<std::int64_t>(),
                                  r.at("updated_at").get<std::int64_t>()});
    }
    if (vectors_sha256) *vectors_sha256 = doc.value("vectors_sha256", std::string{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptManifest, std::string("malformed manifest: ") + e.what());
  }
  return manifest;
}

void ConceptStore::persist(const std::filesystem::path& dir) const {
  const SnapshotPtr snap = snapshot();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  }
  StoreManifest manifest{kManifestVersion, options_.dim, {}};
  for (const auto& r : snap->records()) {
    manifest.records.push_back(
        {r.id, r.name, r.category, r.description, r.image_ref, r.created_at, r.updated_at});
  }
  const std::string vectors = encode_vector_file(snap->matrix());
  // Vectors first: a crash between the two writes leaves a checksum mismatch,
  // which load() reports instead of silently pairing stale rows.
  write_file_atomic(dir / kVectorsFile, vectors);
  write_file_atomic(dir / kManifestFile, manifest_to_json(manifest, sha256_hex(vectors)));
}

StoreManifest ConceptStore::load(const std::filesystem::path& dir) {
  std::string checksum;
  StoreManifest manifest = manifest_from_json(read_file(dir / kManifestFile), &checksum);
  if (manifest.version != kManifestVersion) {
    throw Error(ErrorCode::kCorruptManifest,
                "unsupported manifest version " + std::to_string(manifest.version));
  }
  if (manifest.dim != options_.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "store on disk has dim " + std::to_string(manifest.dim) +
                    ", expected " + std::to_string(options_.dim));
  }
  const std::string bytes = read_file(dir / kVectorsFile);
  if (!checksum.empty() && checksum != sha256_hex(bytes)) {
    throw Error(ErrorCode::kCorruptManifest, "vectors.bin checksum mismatch");
  }
  const EmbeddingRows rows = decode_vector_file(bytes);
  if (static_cast<std::size_t>(rows.rows()) != manifest.records.size() ||
      (rows.rows() > 0 && rows.cols() != manifest.dim)) {
    throw Error(ErrorCode::kCorruptManifest,
                "vectors.bin holds " + std::to_string(rows.rows()) + " rows, manifest lists " +
                    std::to_string(manifest.records.size()));
  }

  std::vector<Slot> slots;
  slots.reserve(manifest.records.size());
  std::set<std::string> names, ids;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& m = manifest.records[i];
    if (!names.insert(m.name).second || !ids.insert(m.id).second) {
      throw Error(ErrorCode::kCorruptManifest, "duplicate id or name in manifest: " + m.name);
    }
    EmbeddingVector e = rows.row(static_cast<Eigen::Index>(i)).transpose();
    if (!e.allFinite()) {
      throw Error(ErrorCode::kCorruptManifest, "non-finite embedding for " + m.name);
    }
    slots.push_back({{m.id, m.name, m.category, m.description, m.image_ref, std::move(e),
                      m.created_at, m.updated_at},
                     true});
  }

  std::lock_guard lock(mu_);
  slots_ = std::move(slots);
  alive_ = slots_.size();
  rebuild_indices();
  cached_.reset();
  return manifest;
}

}  // namespace persona
