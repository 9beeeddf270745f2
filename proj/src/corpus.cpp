#include "quoteflow/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "quoteflow/util.hpp"

namespace quoteflow {

using nlohmann::json;

Sentiment parse_sentiment(const std::string& s) {
  if (s == "pro_a") return Sentiment::pro_a;
  if (s == "pro_b") return Sentiment::pro_b;
  if (s == "neutral") return Sentiment::neutral;
  throw Error("unknown sentiment label: '" + s + "' (expected pro_a|pro_b|neutral)");
}

std::string to_string(Sentiment s) {
  switch (s) {
    case Sentiment::pro_a: return "pro_a";
    case Sentiment::pro_b: return "pro_b";
    case Sentiment::neutral: return "neutral";
  }
  return "neutral";
}

Orientation parse_orientation(const std::string& s) {
  if (s == "state_controlled") return Orientation::state_controlled;
  if (s == "state_agenda") return Orientation::state_agenda;
  if (s == "independent") return Orientation::independent;
  if (s == "unknown") return Orientation::unknown;
  throw Error("unknown orientation label: '" + s + "'");
}

std::string to_string(Orientation o) {
  switch (o) {
    case Orientation::state_controlled: return "state_controlled";
    case Orientation::state_agenda: return "state_agenda";
    case Orientation::independent: return "independent";
    case Orientation::unknown: return "unknown";
  }
  return "unknown";
}

const Outlet* Corpus::find_outlet(const std::string& outlet_id) const {
  for (const auto& o : outlets) {
    if (o.outlet_id == outlet_id) return &o;
  }
  return nullptr;
}

std::vector<std::string> Corpus::topic_vocabulary() const {
  std::set<std::string> topics;
  for (const auto& r : records) topics.insert(r.topic);
  return {topics.begin(), topics.end()};
}

void Corpus::rebuild_index() {
  by_outlet.clear();
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_outlet[records[i].outlet_id].push_back(i);
  }
}

namespace {

const char* kRecordKeys[] = {"quote_id", "outlet_id", "article_id", "text",
                             "published_at", "speaker", "topic", "sentiment",
                             "country", "language"};

QuoteRecord parse_record_line(const std::string& line,
                              const std::map<std::string, std::string>& sentiment_map) {
  json j = json::parse(line);
  if (!j.is_object()) throw Error("record line is not a JSON object");
  for (const char* key : kRecordKeys) {
    if (!j.contains(key)) throw Error(std::string("missing key: ") + key);
  }
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(kRecordKeys), std::end(kRecordKeys),
                     [&](const char* k) { return key == k; }) == std::end(kRecordKeys)) {
      throw Error("unexpected key: " + key);
    }
  }
  QuoteRecord r;
  r.quote_id = j.at("quote_id").get<std::string>();
  r.outlet_id = j.at("outlet_id").get<std::string>();
  r.article_id = j.at("article_id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  if (trim(r.text).empty()) throw Error("empty text for quote_id " + r.quote_id);
  r.published_at = parse_iso8601(j.at("published_at").get<std::string>());
  r.speaker = j.at("speaker").get<std::string>();
  r.topic = j.at("topic").get<std::string>();
  std::string raw = j.at("sentiment").get<std::string>();
  if (auto it = sentiment_map.find(raw); it != sentiment_map.end()) raw = it->second;
  r.sentiment = parse_sentiment(raw);
  r.country = j.at("country").get<std::string>();
  r.language = j.at("language").get<std::string>();
  return r;
}

Outlet parse_outlet_line(const std::string& line) {
  json j = json::parse(line);
  if (!j.is_object()) throw Error("outlet line is not a JSON object");
  Outlet o;
  o.outlet_id = j.at("outlet_id").get<std::string>();
  o.name = j.value("name", o.outlet_id);
  o.country = j.value("country", std::string{});
  o.orientation = parse_orientation(j.value("orientation", std::string{"unknown"}));
  if (o.outlet_id.empty()) throw Error("outlet with empty outlet_id");
  return o;
}

}  // namespace

Corpus ingest(const std::string& records_path, const std::string& outlets_path,
              const IngestOptions& opts, IngestReport* report) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;

  Corpus corpus;
  {
    std::ifstream in(outlets_path);
    if (!in) throw Error("cannot read outlet table: " + outlets_path);
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      Outlet o;
      try {
        o = parse_outlet_line(line);
      } catch (const std::exception& e) {
        throw Error(outlets_path + ":" + std::to_string(lineno) + ": " + e.what());
      }
      if (!seen.insert(o.outlet_id).second) {
        throw Error("duplicate outlet_id '" + o.outlet_id + "' in " + outlets_path);
      }
      corpus.outlets.push_back(std::move(o));
    }
  }

  std::ifstream in(records_path);
  if (!in) throw Error("cannot read corpus file: " + records_path);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    QuoteRecord r;
    try {
      r = parse_record_line(line, opts.sentiment_map);
      if (corpus.find_outlet(r.outlet_id) == nullptr) {
        throw Error("unknown outlet_id '" + r.outlet_id + "'");
      }
    } catch (const std::exception& e) {
      const std::string msg =
          records_path + ":" + std::to_string(lineno) + ": " + e.what();
      if (opts.strict) throw Error(msg);
      rep.skipped += 1;
      rep.warnings.push_back(msg);
      continue;
    }
    // Duplicate ids are always fatal: a corpus with ambiguous identities
    // cannot be clustered or matched against truth.
    if (!seen_ids.insert(r.quote_id).second) {
      throw Error(records_path + ":" + std::to_string(lineno) +
                  ": duplicate quote_id '" + r.quote_id + "'");
    }
    corpus.records.push_back(std::move(r));
    rep.parsed += 1;
  }
  corpus.rebuild_index();
  return corpus;
}

void export_corpus(const Corpus& corpus, const std::string& records_path,
                   const std::string& outlets_path) {
  {
    std::ostringstream out;
    for (const auto& r : corpus.records) {
      json j;
      j["quote_id"] = r.quote_id;
      j["outlet_id"] = r.outlet_id;
      j["article_id"] = r.article_id;
      j["text"] = r.text;
      j["published_at"] = format_iso8601(r.published_at);
      j["speaker"] = r.speaker;
      j["topic"] = r.topic;
      j["sentiment"] = to_string(r.sentiment);
      j["country"] = r.country;
      j["language"] = r.language;
      out << j.dump() << '\n';
    }
    write_text_file(records_path, out.str());
  }
  std::ostringstream out;
  for (const auto& o : corpus.outlets) {
    json j;
    j["outlet_id"] = o.outlet_id;
    j["name"] = o.name;
    j["country"] = o.country;
    j["orientation"] = to_string(o.orientation);
    out << j.dump() << '\n';
  }
  write_text_file(outlets_path, out.str());
}

Corpus filter(const Corpus& corpus, const FilterPredicate& pred) {
  // Unknown include topics are certainly typos and name the vocabulary.
  // Excluding an absent topic is a no-op so that re-applying a predicate to
  // its own output is the identity.
  const auto known = corpus.topic_vocabulary();
  for (const auto& t : pred.include_topics) {
    if (!std::binary_search(known.begin(), known.end(), t)) {
      throw Error("unknown topic '" + t + "'; known topics: " + join(known, ", "));
    }
  }

  Corpus out;
  out.outlets = corpus.outlets;
  for (const auto& r : corpus.records) {
    if (!pred.include_topics.empty() &&
        std::find(pred.include_topics.begin(), pred.include_topics.end(), r.topic) ==
            pred.include_topics.end()) {
      continue;
    }
    if (std::find(pred.exclude_topics.begin(), pred.exclude_topics.end(), r.topic) !=
        pred.exclude_topics.end()) {
      continue;
    }
    if (!pred.sentiments.empty() &&
        std::find(pred.sentiments.begin(), pred.sentiments.end(), r.sentiment) ==
            pred.sentiments.end()) {
      continue;
    }
    if (pred.date_from && r.published_at < *pred.date_from) continue;
    if (pred.date_to && r.published_at > *pred.date_to) continue;
    out.records.push_back(r);
  }
  out.rebuild_index();
  return out;
}

}  // namespace quoteflow
