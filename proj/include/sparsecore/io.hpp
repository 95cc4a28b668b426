#pragma once

// On-disk formats: architecture files, theta snapshots, checkpoints, metrics
// and search traces. JSON documents are written with sorted keys and a
// trailing newline.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsecore/core_tensor.hpp"
#include "sparsecore/embeddings.hpp"
#include "sparsecore/error.hpp"
#include "sparsecore/eval.hpp"
#include "sparsecore/search.hpp"

namespace sparsecore {

using json = nlohmann::json;

inline void write_json(const std::filesystem::path& path, const json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// Architecture document:
//   {"2": [codes...], "3": [...], "max_arity": N, "segment_count": M}

inline json architecture_to_json(const ArchitectureSet& arch) {
  json doc = json::object();
  doc["max_arity"] = arch.max_arity();
  doc["segment_count"] = arch.segment_count();
  for (const auto& [n, a] : arch.cores()) doc[std::to_string(n)] = a.codes;
  return doc;
}

namespace detail {

inline std::size_t arity_key(const std::string& key) {
  std::size_t pos = 0;
  std::size_t n = 0;
  try {
    n = std::stoul(key, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != key.size() || key.empty()) throw DataError("unexpected key '" + key + "'");
  return n;
}

inline std::size_t required_count(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_number_unsigned()) {
    throw DataError(std::string("document lacks non-negative integer field '") + key + "'");
  }
  return doc[key].get<std::size_t>();
}

}  // namespace detail

/// Parses an architecture document without validating codes; call
/// ArchitectureSet::validate() on the result.
inline ArchitectureSet architecture_from_json(const json& doc) {
  if (!doc.is_object()) throw DataError("architecture document must be an object");
  ArchitectureSet arch(detail::required_count(doc, "max_arity"),
                       detail::required_count(doc, "segment_count"));
  for (const auto& [key, value] : doc.items()) {
    if (key == "max_arity" || key == "segment_count") continue;
    const auto n = detail::arity_key(key);
    if (!value.is_array()) throw DataError("codes of arity " + key + " must be an array");
    std::vector<int> codes;
    codes.reserve(value.size());
    for (const auto& c : value) {
      if (!c.is_number_integer()) throw DataError("codes of arity " + key + " must be integers");
      codes.push_back(c.get<int>());
    }
    arch.set(CoreAssignment(n, arch.segment_count(), std::move(codes)));
  }
  return arch;
}

inline void save_architecture(const std::filesystem::path& path, const ArchitectureSet& arch) {
  write_json(path, architecture_to_json(arch));
}

/// Loads and validates; throws DataError listing violations.
inline ArchitectureSet load_architecture(const std::filesystem::path& path) {
  auto arch = architecture_from_json(read_json(path));
  if (auto v = arch.validate(); !v.empty()) {
    throw DataError(path.string() + ": " + describe(v));
  }
  return arch;
}

// Theta snapshot: same layout, each arity maps to three probability arrays
// ordered by op -1, 0, +1.

inline json theta_to_json(const ArchitectureDistribution& theta) {
  json doc = json::object();
  doc["max_arity"] = theta.max_arity();
  doc["segment_count"] = theta.segment_count();
  for (const auto& [n, v] : theta.matrices()) {
    const std::size_t k = v.size() / kOpCount;
    json rows = json::array();
    for (std::size_t r = 0; r < kOpCount; ++r)
      rows.push_back(std::vector<double>(v.begin() + r * k, v.begin() + (r + 1) * k));
    doc[std::to_string(n)] = rows;
  }
  return doc;
}

inline ArchitectureDistribution theta_from_json(const json& doc) {
  if (!doc.is_object()) throw DataError("theta document must be an object");
  const auto max_arity = detail::required_count(doc, "max_arity");
  const auto segments = detail::required_count(doc, "segment_count");
  ArchitectureDistribution theta(std::max<std::size_t>(max_arity, 2), segments);
  for (const auto& [key, value] : doc.items()) {
    if (key == "max_arity" || key == "segment_count") continue;
    const auto n = detail::arity_key(key);
    if (!value.is_array() || value.size() != kOpCount) {
      throw DataError("theta of arity " + key + " must hold three arrays");
    }
    std::vector<double> flat;
    for (const auto& row : value) {
      if (!row.is_array()) throw DataError("theta of arity " + key + " must hold three arrays");
      for (const auto& p : row) flat.push_back(p.get<double>());
    }
    theta.set(n, std::move(flat));
  }
  if (theta.simplex_error() > 1e-9) throw DataError("theta columns are not probability vectors");
  return theta;
}

// Checkpoints: meta.json plus entities.bin / relations.bin holding row-major
// little-endian IEEE-754 float32.

namespace detail {

inline void write_f32(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  std::vector<char> buf(m.data().size() * 4);
  for (std::size_t i = 0; i < m.data().size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i]));
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Matrix read_f32(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), {});
  if (buf.size() != rows * cols * 4) {
    throw DataError(path.string() + ": expected " + std::to_string(rows * cols * 4) +
                    " bytes, found " + std::to_string(buf.size()));
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
    m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

}  // namespace detail

/// Rounds every entry to float32, the checkpoint precision.
inline void round_to_f32(SegmentedEmbeddings& emb) {
  for (auto* m : {&emb.entities, &emb.relations})
    for (double& v : m->data()) v = static_cast<double>(static_cast<float>(v));
}

struct Checkpoint {
  SegmentedEmbeddings embeddings;
  ArchitectureSet architecture;
  json meta;
};

/// Writes meta.json, entities.bin, relations.bin and architecture.json.
/// `extra` is merged into meta.json.
inline void save_checkpoint(const std::filesystem::path& dir, const SegmentedEmbeddings& emb,
                            const ArchitectureSet& arch, const json& extra = json::object()) {
  std::filesystem::create_directories(dir);
  detail::write_f32(dir / "entities.bin", emb.entities);
  detail::write_f32(dir / "relations.bin", emb.relations);
  save_architecture(dir / "architecture.json", arch);
  json meta = extra.is_object() ? extra : json::object();
  meta["entity_count"] = emb.entity_count();
  meta["relation_count"] = emb.relation_count();
  meta["dimension"] = emb.dimension();
  meta["segment_count"] = emb.segment_count;
  meta["max_arity"] = arch.max_arity();
  meta["architecture"] = "architecture.json";
  write_json(dir / "meta.json", meta);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw UsageError("no checkpoint directory " + dir.string());
  Checkpoint ck;
  ck.meta = read_json(dir / "meta.json");
  const auto n_e = detail::required_count(ck.meta, "entity_count");
  const auto n_r = detail::required_count(ck.meta, "relation_count");
  const auto d = detail::required_count(ck.meta, "dimension");
  const auto M = detail::required_count(ck.meta, "segment_count");
  SegmentedEmbeddings::check_segmentation(d, M);
  ck.embeddings.entities = detail::read_f32(dir / "entities.bin", n_e, d);
  ck.embeddings.relations = detail::read_f32(dir / "relations.bin", n_r, d);
  ck.embeddings.segment_count = M;
  const std::string arch_file =
      ck.meta.contains("architecture") ? ck.meta["architecture"].get<std::string>() : "architecture.json";
  ck.architecture = load_architecture(dir / arch_file);
  if (ck.architecture.segment_count() != M) {
    throw DataError("checkpoint architecture segment count differs from embeddings");
  }
  if (!ck.embeddings.all_finite()) throw NumericError("checkpoint contains non-finite values");
  return ck;
}

inline json metrics_to_json(const RankingMetrics& m, Split split, double wall_seconds) {
  return json{{"split", split_name(split)}, {"mrr", m.mrr},           {"hits1", m.hits1},
              {"hits3", m.hits3},           {"hits10", m.hits10},     {"queries", m.count},
              {"wall_seconds", wall_seconds}};
}

inline json record_to_json(const SearchRecord& r) {
  return json{{"iteration", r.iteration},     {"epoch", r.epoch},
              {"train_loss", r.train_loss},   {"sampled_codes", r.sampled_codes},
              {"utilities", r.utilities},     {"theta_entropy", r.theta_entropy},
              {"valid_mrr", r.valid_mrr},     {"step_radius", r.step_radius}};
}

/// One JSON object per line.
inline void save_trace(const std::filesystem::path& path, const SearchTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  for (const auto& r : trace.records) out << record_to_json(r).dump() << '\n';
}

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"dimension", c.dimension},       {"segment_count", c.segment_count},
              {"learning_rate", c.learning_rate}, {"decay_rate", c.decay_rate},
              {"batch_size", c.batch_size},     {"max_epochs", c.max_epochs},
              {"seed", c.seed},                 {"mc_samples", c.mc_samples},
              {"eval_every", c.eval_every},     {"patience", c.patience}};
}

inline json search_config_to_json(const SearchConfig& c) {
  return json{{"lambda", c.mc_samples},
              {"search_epochs", c.search_epochs},
              {"valid_batch_size", c.valid_batch_size},
              {"dimension", c.dimension},
              {"theta_lr", c.asng.delta_init},
              {"alpha", c.asng.alpha},
              {"theta_min", c.asng.theta_min},
              {"raw_utility", c.utility == UtilityMode::kRaw},
              {"utility_ties", c.utility_ties == TiePolicy::kOptimistic ? "optimistic" : "pessimistic"},
              {"seed", c.seed}};
}

}  // namespace sparsecore
