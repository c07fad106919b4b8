// Bidirectional cosine retrieval, either in the learned joint space or
// directly on raw encoder embeddings (zero-shot baseline).
#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "onoalign/embstore.hpp"
#include "onoalign/model.hpp"

namespace onoalign {

enum class Direction { i2a, a2i };

inline std::string to_string(Direction d) { return d == Direction::i2a ? "I2A" : "A2I"; }

inline Direction parse_direction(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  if (text == "i2a") return Direction::i2a;
  if (text == "a2i") return Direction::a2i;
  throw std::invalid_argument("unknown direction '" + text + "'");
}

inline Modality query_modality(Direction d) { return d == Direction::i2a ? Modality::image : Modality::audio; }
inline Modality candidate_modality(Direction d) { return d == Direction::i2a ? Modality::audio : Modality::image; }

class RetrievalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScoredCandidate {
  std::string id;
  int class_id = 0;
  double score = 0.0;

  bool operator==(const ScoredCandidate&) const = default;
};

struct RankedList {
  std::string query_id;
  int query_class = 0;
  Direction direction = Direction::i2a;
  std::vector<ScoredCandidate> candidates;  // descending score

  bool operator==(const RankedList&) const = default;
};

// Items of one modality: ids, class labels and one vector per row.
struct ItemSet {
  Modality modality = Modality::image;
  std::vector<std::string> ids;
  std::vector<int> classes;
  Matrix vectors;

  std::size_t size() const { return ids.size(); }
};

inline ItemSet items_from_pack(const EmbeddingPack& pack, Modality modality,
                               std::optional<Split> split = std::nullopt) {
  ItemSet items;
  items.modality = modality;
  const auto rows = pack.indices(modality, split);
  for (auto i : rows) {
    items.ids.push_back(pack.records[i].id);
    items.classes.push_back(pack.records[i].class_id);
  }
  items.vectors = rows.empty() ? Matrix(0, pack.dim) : pack_matrix(pack, rows);
  return items;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw RetrievalError("cosine_similarity: zero-norm vector");
  return dot(a, b) / (na * nb);
}

// Ranks every candidate by cosine score against the query. Equal scores
// keep ascending candidate index order.
inline RankedList rank_candidates(std::span<const double> query, const std::string& query_id,
                                  int query_class, Direction direction, const ItemSet& candidates) {
  if (candidates.size() == 0) throw RetrievalError("rank_candidates: empty candidate set");
  if (candidates.vectors.cols() != query.size()) {
    throw ShapeError("rank_candidates: query width " + std::to_string(query.size()) +
                     " != candidate width " + std::to_string(candidates.vectors.cols()));
  }
  std::vector<double> scores(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    scores[j] = cosine_similarity(query, candidates.vectors.row(j));
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RankedList list{query_id, query_class, direction, {}};
  list.candidates.reserve(order.size());
  for (auto j : order) list.candidates.push_back({candidates.ids[j], candidates.classes[j], scores[j]});
  return list;
}

inline std::vector<RankedList> rank_all(const ItemSet& queries, const ItemSet& candidates,
                                        Direction direction) {
  if (queries.modality != query_modality(direction) ||
      candidates.modality != candidate_modality(direction)) {
    throw RetrievalError("direction " + to_string(direction) + " expects " +
                         to_string(query_modality(direction)) + " queries and " +
                         to_string(candidate_modality(direction)) + " candidates");
  }
  std::vector<RankedList> lists;
  lists.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    lists.push_back(rank_candidates(queries.vectors.row(q), queries.ids[q], queries.classes[q],
                                    direction, candidates));
  }
  return lists;
}

// Joint-space retrieval: both sides go through their own projector in
// inference mode. The classifier takes no part.
inline std::vector<RankedList> retrieve(const AlignmentModel& model, const ItemSet& queries,
                                        const ItemSet& candidates, Direction direction) {
  auto projected = [&](const ItemSet& items) {
    ItemSet out = items;
    out.vectors = items.modality == Modality::image ? project_image(model, items.vectors)
                                                    : project_audio(model, items.vectors);
    return out;
  };
  if (queries.modality != query_modality(direction) ||
      candidates.modality != candidate_modality(direction)) {
    return rank_all(queries, candidates, direction);  // throws the modality error
  }
  return rank_all(projected(queries), projected(candidates), direction);
}

inline Matrix l2_normalized(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double n = l2_norm(row);
    if (n == 0.0) throw RetrievalError("l2_normalized: zero-norm row " + std::to_string(r));
    for (double& v : row) v /= n;
  }
  return out;
}

// Zero-shot baseline: raw encoder embeddings, l2-normalized, ranked by
// cosine. Nothing is trained.
inline std::vector<RankedList> zero_shot_retrieve(const ItemSet& queries, const ItemSet& candidates,
                                                  Direction direction) {
  if (queries.vectors.cols() != candidates.vectors.cols()) {
    throw ShapeError("zero_shot_retrieve: query and candidate widths differ");
  }
  ItemSet q = queries;
  ItemSet c = candidates;
  q.vectors = l2_normalized(queries.vectors);
  c.vectors = l2_normalized(candidates.vectors);
  return rank_all(q, c, direction);
}

// Convenience: queries and candidates of one split from a pair of packs.
inline std::pair<ItemSet, ItemSet> split_items(const EmbeddingPack& images, const EmbeddingPack& audio,
                                               Split split, Direction direction) {
  ItemSet img = items_from_pack(images, Modality::image, split);
  ItemSet aud = items_from_pack(audio, Modality::audio, split);
  if (direction == Direction::i2a) return {std::move(img), std::move(aud)};
  return {std::move(aud), std::move(img)};
}

inline nlohmann::ordered_json to_json(const RankedList& list) {
  nlohmann::ordered_json j;
  j["query_id"] = list.query_id;
  j["direction"] = to_string(list.direction);
  auto ranking = nlohmann::ordered_json::array();
  for (const auto& c : list.candidates) {
    nlohmann::ordered_json item;
    item["id"] = c.id;
    item["class_id"] = c.class_id;
    item["score"] = c.score;
    ranking.push_back(std::move(item));
  }
  j["ranking"] = std::move(ranking);
  return j;
}

// One JSON object per line.
inline void write_jsonl(std::ostream& out, std::span<const RankedList> lists) {
  for (const auto& l : lists) out << to_json(l).dump() << '\n';
}

// Reads lists written by write_jsonl. The query class is not part of the
// wire format, so it is looked up from `class_of_query`.
template <typename ClassLookup>
std::vector<RankedList> read_jsonl(std::istream& in, ClassLookup&& class_of_query) {
  std::vector<RankedList> lists;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    RankedList l;
    l.query_id = j.at("query_id").get<std::string>();
    l.direction = parse_direction(j.at("direction").get<std::string>());
    l.query_class = class_of_query(l.query_id);
    for (const auto& c : j.at("ranking")) {
      l.candidates.push_back({c.at("id").get<std::string>(), c.at("class_id").get<int>(),
                              c.at("score").get<double>()});
    }
    lists.push_back(std::move(l));
  }
  return lists;
}

}  // namespace onoalign
