#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace quoteflow {

enum class Sentiment { pro_a, pro_b, neutral };
enum class Orientation { state_controlled, state_agenda, independent, unknown };

Sentiment parse_sentiment(const std::string& s);
std::string to_string(Sentiment s);
Orientation parse_orientation(const std::string& s);
std::string to_string(Orientation o);

struct QuoteRecord {
  std::string quote_id;
  std::string outlet_id;
  std::string article_id;
  std::string text;
  std::int64_t published_at = 0;  // seconds since epoch, UTC
  std::string speaker;
  std::string topic;
  Sentiment sentiment = Sentiment::neutral;
  std::string country;
  std::string language;

  bool operator==(const QuoteRecord&) const = default;
};

struct Outlet {
  std::string outlet_id;
  std::string name;
  std::string country;
  Orientation orientation = Orientation::unknown;

  bool operator==(const Outlet&) const = default;
};

// Immutable after ingest; safe for concurrent readers.
struct Corpus {
  std::vector<QuoteRecord> records;
  std::vector<Outlet> outlets;
  std::map<std::string, std::vector<std::size_t>> by_outlet;  // outlet_id -> record indices

  const Outlet* find_outlet(const std::string& outlet_id) const;
  std::vector<std::string> topic_vocabulary() const;  // sorted unique
  void rebuild_index();

  bool operator==(const Corpus& other) const {
    return records == other.records && outlets == other.outlets;
  }
};

struct IngestOptions {
  bool strict = false;
  // Raw sentiment label -> "pro_a" / "pro_b" / "neutral". Applied before
  // parsing, so corpora labeled on a spectrum collapse to three channels.
  std::map<std::string, std::string> sentiment_map;
};

struct IngestReport {
  std::size_t parsed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

// records: UTF-8 NDJSON, one object per line, keys exactly quote_id, outlet_id,
// article_id, text, published_at, speaker, topic, sentiment, country, language.
// outlets: NDJSON with keys outlet_id, name, country, orientation.
Corpus ingest(const std::string& records_path, const std::string& outlets_path,
              const IngestOptions& opts = {}, IngestReport* report = nullptr);

void export_corpus(const Corpus& corpus, const std::string& records_path,
                   const std::string& outlets_path);

struct FilterPredicate {
  std::vector<std::string> include_topics;  // empty = all topics
  std::vector<std::string> exclude_topics;
  std::vector<Sentiment> sentiments;  // empty = all channels
  std::optional<std::int64_t> date_from;  // inclusive
  std::optional<std::int64_t> date_to;    // inclusive
};

// Returns the sub-corpus; outlets are kept as-is. Include-topics absent from
// the corpus raise an Error listing the known labels; absent exclude-topics
// are no-ops, so filter(filter(c, p), p) == filter(c, p).
Corpus filter(const Corpus& corpus, const FilterPredicate& pred);

}  // namespace quoteflow
