#include "latr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "latr/tokenizer.hpp"

namespace latr {

using nlohmann::json;

std::string OcrDocument::joined_text() const {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i].text;
  }
  return out;
}

// --- reading order -----------------------------------------------------------

namespace {

double center_y(const OcrWord& w) { return 0.5 * (w.y0 + w.y1); }

bool same_line(const OcrWord& a, const OcrWord& b) {
  const double ha = std::abs(a.y1 - a.y0);
  const double hb = std::abs(b.y1 - b.y0);
  const double tolerance = 0.5 * std::min(ha, hb);
  return std::abs(center_y(a) - center_y(b)) < tolerance;
}

struct UnionFind {
  std::vector<size_t> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  size_t find(size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(size_t a, size_t b) { parent[find(a)] = find(b); }
};

// Lines as index groups, lines sorted by mean vertical center, words within a
// line by (x0, y0, input index).
std::vector<std::vector<size_t>> group_lines(const std::vector<OcrWord>& words) {
  UnionFind uf(words.size());
  for (size_t i = 0; i < words.size(); ++i) {
    for (size_t j = i + 1; j < words.size(); ++j) {
      if (same_line(words[i], words[j])) uf.unite(i, j);
    }
  }
  std::vector<std::vector<size_t>> lines;
  std::vector<int> line_of(words.size(), -1);
  for (size_t i = 0; i < words.size(); ++i) {
    const size_t root = uf.find(i);
    if (line_of[root] < 0) {
      line_of[root] = static_cast<int>(lines.size());
      lines.emplace_back();
    }
    lines[line_of[root]].push_back(i);
  }
  for (auto& line : lines) {
    std::sort(line.begin(), line.end(), [&](size_t a, size_t b) {
      if (words[a].x0 != words[b].x0) return words[a].x0 < words[b].x0;
      if (words[a].y0 != words[b].y0) return words[a].y0 < words[b].y0;
      return a < b;
    });
  }
  std::sort(lines.begin(), lines.end(), [&](const auto& a, const auto& b) {
    double ca = 0, cb = 0;
    for (const size_t i : a) ca += center_y(words[i]);
    for (const size_t i : b) cb += center_y(words[i]);
    return ca / a.size() < cb / b.size();
  });
  return lines;
}

}  // namespace

std::vector<size_t> reading_order(const std::vector<OcrWord>& words) {
  std::vector<size_t> order;
  order.reserve(words.size());
  for (const auto& line : group_lines(words)) {
    order.insert(order.end(), line.begin(), line.end());
  }
  return order;
}

void sort_reading_order(OcrDocument& doc) {
  const auto order = reading_order(doc.words);
  std::vector<OcrWord> sorted;
  sorted.reserve(doc.words.size());
  for (const size_t i : order) sorted.push_back(doc.words[i]);
  doc.words = std::move(sorted);
}

// --- ingestion ---------------------------------------------------------------

OcrDocument ingest_json(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError("cannot parse OCR document " + origin + ": " + e.what());
  }
  OcrDocument doc;
  try {
    doc.id = j.at("id").get<std::string>();
    doc.page_w = j.at("page_w").get<int>();
    doc.page_h = j.at("page_h").get<int>();
    if (doc.page_w <= 0 || doc.page_h <= 0) {
      throw FormatError("document " + origin + " has non-positive page dims");
    }
    if (j.contains("image")) doc.image_path = j["image"].get<std::string>();
    for (const auto& w : j.at("words")) {
      OcrWord word;
      word.text = w.at("text").get<std::string>();
      word.x0 = w.at("x0").get<double>();
      word.y0 = w.at("y0").get<double>();
      word.x1 = w.at("x1").get<double>();
      word.y1 = w.at("y1").get<double>();
      if (word.text.empty()) continue;
      if (word.x1 < word.x0) std::swap(word.x0, word.x1);
      if (word.y1 < word.y0) std::swap(word.y0, word.y1);
      word.x0 = std::clamp(word.x0, 0.0, static_cast<double>(doc.page_w));
      word.x1 = std::clamp(word.x1, 0.0, static_cast<double>(doc.page_w));
      word.y0 = std::clamp(word.y0, 0.0, static_cast<double>(doc.page_h));
      word.y1 = std::clamp(word.y1, 0.0, static_cast<double>(doc.page_h));
      doc.words.push_back(std::move(word));
    }
  } catch (const json::exception& e) {
    throw FormatError("bad field in OCR document " + origin + ": " + e.what());
  }
  sort_reading_order(doc);
  return doc;
}

OcrDocument ingest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open OCR document " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return ingest_json(buf.str(), path);
}

std::string to_json(const OcrDocument& doc) {
  json words = json::array();
  for (const auto& w : doc.words) {
    words.push_back({{"text", w.text}, {"x0", w.x0}, {"y0", w.y0}, {"x1", w.x1}, {"y1", w.y1}});
  }
  json j{{"id", doc.id}, {"page_w", doc.page_w}, {"page_h", doc.page_h}, {"words", words}};
  if (!doc.image_path.empty()) j["image"] = doc.image_path;
  return j.dump();
}

std::vector<QaExample> load_qa_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open QA dataset " + path);
  const auto dir = std::filesystem::path(path).parent_path();
  std::vector<QaExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    QaExample ex;
    try {
      ex.question = j.at("question").get<std::string>();
      for (const auto& a : j.at("answers")) ex.answers.push_back(a.get<std::string>());
      if (ex.question.empty() || ex.answers.empty()) {
        throw FormatError(path + ":" + std::to_string(lineno) +
                          ": question and answers must be non-empty");
      }
      const auto& doc = j.at("doc");
      if (doc.is_string()) {
        ex.ocr = ingest((dir / doc.get<std::string>()).string());
      } else {
        ex.ocr = ingest_json(doc.dump(), path + ":" + std::to_string(lineno));
      }
      if (j.contains("image")) ex.image_path = (dir / j["image"].get<std::string>()).string();
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void save_qa_jsonl(const std::vector<QaExample>& examples, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write QA dataset " + path);
  for (const auto& ex : examples) {
    json j{{"question", ex.question},
           {"answers", ex.answers},
           {"doc", json::parse(to_json(ex.ocr))}};
    if (!ex.image_path.empty()) j["image"] = ex.image_path;
    f << j.dump() << '\n';
  }
}

// --- quality filtering ----------------------------------------------------------

namespace {

bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool is_number(std::string_view s) { return all_digits(s); }

bool is_float(std::string_view s) {
  const size_t sep = s.find_first_of(".,");
  if (sep == std::string_view::npos || sep == 0 || sep + 1 >= s.size()) return false;
  return all_digits(s.substr(0, sep)) && all_digits(s.substr(sep + 1));
}

bool is_number_or_float(std::string_view s) { return is_number(s) || is_float(s); }

bool is_currency(std::string_view s) {
  static const std::string_view symbols[] = {"$", "\xe2\x82\xac" /* euro */,
                                             "\xc2\xa3" /* pound */};
  for (const auto sym : symbols) {
    if (s.size() > sym.size() && s.substr(0, sym.size()) == sym &&
        is_number_or_float(s.substr(sym.size()))) {
      return true;
    }
    if (s.size() > sym.size() && s.substr(s.size() - sym.size()) == sym &&
        is_number_or_float(s.substr(0, s.size() - sym.size()))) {
      return true;
    }
  }
  return false;
}

bool is_date(std::string_view s) {
  // dd/mm/yyyy, dd-mm-yyyy, mm/dd/yy and friends: 1-2 digits, separator,
  // 1-2 digits, same separator, 2 or 4 digits.
  for (const char sep : {'/', '-'}) {
    const size_t p1 = s.find(sep);
    if (p1 == std::string_view::npos) continue;
    const size_t p2 = s.find(sep, p1 + 1);
    if (p2 == std::string_view::npos) continue;
    const auto a = s.substr(0, p1);
    const auto b = s.substr(p1 + 1, p2 - p1 - 1);
    const auto c = s.substr(p2 + 1);
    if (a.size() >= 1 && a.size() <= 2 && b.size() >= 1 && b.size() <= 2 &&
        (c.size() == 2 || c.size() == 4) && all_digits(a) && all_digits(b) && all_digits(c)) {
      return true;
    }
  }
  return false;
}

}  // namespace

bool is_numeric_like(const std::string& word) {
  return is_number(word) || is_float(word) || is_currency(word) || is_date(word);
}

int levenshtein(const std::string& a, const std::string& b) {
  const size_t n = b.size();
  std::vector<int> prev(n + 1), cur(n + 1);
  for (size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= n; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

Dictionary::Dictionary(const std::vector<std::string>& words) {
  for (const auto& w : words) {
    const std::string lower = lowercase(w);
    if (lower.empty()) continue;
    if (!exact_.insert(lower).second) continue;
    if (by_length_.size() <= lower.size()) by_length_.resize(lower.size() + 1);
    by_length_[lower.size()].push_back(lower);
  }
}

Dictionary Dictionary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dictionary " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) words.push_back(line);
  }
  return Dictionary(words);
}

bool Dictionary::contains_exact(const std::string& word) const {
  return exact_.count(lowercase(word)) > 0;
}

bool Dictionary::matches_within_one(const std::string& word) const {
  const std::string lower = lowercase(word);
  if (exact_.count(lower)) return true;
  const size_t len = lower.size();
  for (size_t bucket = (len == 0 ? 0 : len - 1); bucket <= len + 1; ++bucket) {
    if (bucket >= by_length_.size()) continue;
    for (const auto& cand : by_length_[bucket]) {
      if (levenshtein(lower, cand) <= 1) return true;
    }
  }
  return false;
}

FilterVerdict idl_filter(const OcrDocument& doc, const Dictionary& dictionary) {
  FilterVerdict verdict;
  if (doc.words.empty()) verdict.reasons.insert(FilterReason::Unreadable);
  if (doc.words.size() < 10) verdict.reasons.insert(FilterReason::TooFewWords);
  if (!doc.words.empty() && !dictionary.empty()) {
    int erroneous = 0;
    for (const auto& w : doc.words) {
      if (is_numeric_like(w.text)) continue;
      if (!dictionary.matches_within_one(w.text)) ++erroneous;
    }
    verdict.error_fraction =
        static_cast<double>(erroneous) / static_cast<double>(doc.words.size());
    if (verdict.error_fraction >= 0.5) verdict.reasons.insert(FilterReason::TooManyErrors);
  }
  verdict.keep = verdict.reasons.empty();
  return verdict;
}

// --- augmentation ----------------------------------------------------------------

OcrDocument ocr_error_augment(const OcrDocument& doc, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ValueError("ocr_error_augment: p must be in [0, 1]");
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  OcrDocument out = doc;
  for (auto& w : out.words) {
    if (w.text.empty()) continue;
    if (!rng.bernoulli(p)) continue;
    const size_t pos = rng.below(w.text.size());
    const char original = w.text[pos];
    const size_t original_idx = alphabet.find(original);
    char replacement;
    if (original_idx == std::string::npos) {
      replacement = alphabet[rng.below(alphabet.size())];
    } else {
      // Draw from the 35 characters that differ from the original.
      size_t idx = rng.below(alphabet.size() - 1);
      if (idx >= original_idx) ++idx;
      replacement = alphabet[idx];
    }
    w.text[pos] = replacement;
  }
  return out;
}

OcrDocument shuffle_reading_order(const OcrDocument& doc, Rng& rng) {
  OcrDocument out = doc;
  for (size_t i = out.words.size(); i > 1; --i) {
    std::swap(out.words[i - 1], out.words[rng.below(i)]);
  }
  return out;
}

// --- synthetic corpus ---------------------------------------------------------------

const std::vector<std::string>& builtin_word_list() {
  static const std::vector<std::string> words = [] {
    // Compact english-like word list; enough surface variety for a Zipf
    // distribution with distinct characters and lengths.
    static const char* base[] = {
        "the", "of", "and", "to", "in", "is", "was", "for", "on", "as", "with", "by", "at",
        "from", "that", "this", "it", "are", "be", "or", "an", "not", "we", "you", "they",
        "he", "she", "his", "her", "its", "our", "their", "all", "one", "two", "three",
        "four", "five", "six", "seven", "eight", "nine", "ten", "time", "year", "day",
        "week", "month", "report", "page", "form", "table", "letter", "memo", "note",
        "date", "name", "total", "amount", "number", "order", "invoice", "account",
        "company", "office", "street", "city", "state", "code", "phone", "fax", "mail",
        "subject", "dear", "sincerely", "regards", "thank", "please", "find", "attached",
        "enclosed", "copy", "file", "record", "item", "price", "cost", "tax", "rate",
        "sum", "balance", "due", "paid", "cash", "check", "credit", "debit", "bank",
        "branch", "union", "board", "member", "staff", "manager", "director", "president",
        "chairman", "secretary", "assistant", "department", "division", "section", "unit",
        "group", "team", "project", "plan", "budget", "fund", "grant", "contract",
        "agreement", "policy", "rule", "law", "act", "bill", "tobacco", "research",
        "study", "test", "result", "sample", "product", "brand", "market", "sales",
        "store", "service", "customer", "client", "supplier", "vendor", "shipment",
        "delivery", "receipt", "stock", "share", "profit", "loss", "income", "expense",
        "revenue", "growth", "q", "new", "old", "first", "last", "next", "prior", "per",
        "each", "more", "less", "high", "low", "net", "gross", "annual", "monthly",
        "weekly", "daily", "quarterly", "north", "south", "east", "west", "center",
        "left", "right", "top", "bottom", "above", "below", "under", "over", "between",
        "during", "before", "after", "since", "until", "about", "approximately", "average",
        "minimum", "maximum", "standard", "general", "special", "public", "private",
        "internal", "external", "federal", "national", "regional", "local", "area",
        "region", "district", "zone", "field", "line", "column", "row", "box", "label",
        "title", "header", "footer", "margin", "space", "blank", "void", "draft", "final",
        "revised", "updated", "approved", "pending", "closed", "open", "active",
        "inactive", "complete", "partial", "summary", "detail", "appendix", "exhibit",
        "attachment", "reference", "source", "author", "editor", "review", "comment",
        "question", "answer", "response", "request", "notice", "meeting", "agenda",
        "minutes", "action", "status", "progress", "schedule", "deadline", "period",
        "term", "length", "width", "height", "size", "weight", "volume", "percent",
        "million", "thousand", "hundred", "dozen", "half", "quarter", "third", "double",
        "single", "multiple", "several", "various", "certain", "specific", "following",
        "attached", "stated", "listed", "shown", "given", "provided", "required",
        "requested", "received", "sent", "mailed", "signed", "dated", "issued",
        "recorded", "filed", "noted", "marked", "printed", "typed", "written", "read",
        "seen", "made", "used", "held", "kept", "taken", "put", "set", "run", "call",
        "meet", "send", "pay", "buy", "sell", "ship", "move", "change", "add", "remove",
        "include", "exclude", "begin", "end", "start", "stop", "continue", "return",
        "submit", "approve", "reject", "cancel", "confirm", "verify", "sign", "agree",
        "accept", "decline", "propose", "suggest", "recommend", "advise", "inform",
        "state", "indicate", "show", "list", "describe", "explain", "discuss", "consider",
        "review", "examine", "analyze", "measure", "count", "estimate", "calculate",
        "determine", "identify", "locate", "select", "choose", "apply", "use", "need",
        "want", "expect", "believe", "know", "think", "feel", "see", "look", "appear",
        "seem", "become", "remain", "stay", "keep", "hold", "carry", "bring", "give",
        "get", "take", "make", "do", "have", "will", "would", "can", "could", "may",
        "might", "must", "shall", "should", "been", "being", "were", "had", "has", "did",
        "does", "if", "when", "where", "which", "who", "whom", "whose", "what", "why",
        "how", "than", "then", "there", "here", "now", "today", "tomorrow", "yesterday",
    };
    std::vector<std::string> out(std::begin(base), std::end(base));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }();
  return words;
}

namespace {

// Zipf sampler over ranks 0..n-1 with weight 1/(rank+1).
class ZipfSampler {
 public:
  explicit ZipfSampler(size_t n) : cumulative_(n) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      total += 1.0 / static_cast<double>(i + 1);
      cumulative_[i] = total;
    }
    for (auto& c : cumulative_) c /= total;
  }
  size_t sample(Rng& rng) const {
    const double u = rng.next_double();
    return static_cast<size_t>(
        std::lower_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
};

std::string gibberish_word(Rng& rng) {
  static const std::string letters = "abcdefghijklmnopqrstuvwxyz";
  const int len = 3 + static_cast<int>(rng.below(3));
  std::string out;
  for (int i = 0; i < len; ++i) out += letters[rng.below(letters.size())];
  return out;
}

uint64_t word_hash(const std::string& w) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : w) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(int n_docs, const std::vector<std::string>& words,
                                          const LayoutParams& params, Rng& rng) {
  if (n_docs < 1) throw ValueError("generate_synthetic_corpus: n_docs must be >= 1");
  if (words.empty()) throw EmptyDataError("generate_synthetic_corpus: empty word list");

  SyntheticCorpus corpus;
  corpus.dictionary = words;

  // Fixed phrase table shared by every document, so masked spans are
  // predictable from their surroundings.
  const ZipfSampler word_sampler(words.size());
  std::vector<std::vector<std::string>> phrases(static_cast<size_t>(params.n_phrases));
  for (auto& phrase : phrases) {
    const int len = 3 + static_cast<int>(rng.below(5));
    for (int i = 0; i < len; ++i) phrase.push_back(words[word_sampler.sample(rng)]);
  }
  const ZipfSampler phrase_sampler(phrases.size());

  for (int d = 0; d < n_docs; ++d) {
    OcrDocument doc;
    doc.id = "synth-" + std::to_string(d);
    doc.page_w = params.page_w;
    doc.page_h = params.page_h;

    const int n_words =
        params.min_words + static_cast<int>(rng.below(
                               static_cast<uint64_t>(params.max_words - params.min_words + 1)));
    std::vector<std::string> text;
    while (static_cast<int>(text.size()) < n_words) {
      const auto& phrase = phrases[phrase_sampler.sample(rng)];
      for (const auto& w : phrase) {
        if (static_cast<int>(text.size()) >= n_words) break;
        if (rng.bernoulli(params.rare_word_rate)) {
          text.push_back(gibberish_word(rng));
        } else {
          text.push_back(w);
        }
      }
    }

    // Grid layout: `cols` words per line, rows top to bottom. Boxes are
    // disjoint by construction (cell margins).
    const int cols = params.min_line_words +
                     static_cast<int>(rng.below(static_cast<uint64_t>(
                         params.max_line_words - params.min_line_words + 1)));
    const int rows = (n_words + cols - 1) / cols;
    const double cell_w = static_cast<double>(params.page_w) / cols;
    const double cell_h = static_cast<double>(params.page_h) / rows;
    const double mx = cell_w * 0.1, my = cell_h * 0.1;
    for (int i = 0; i < n_words; ++i) {
      const int r = i / cols, c = i % cols;
      OcrWord w;
      w.text = text[static_cast<size_t>(i)];
      w.x0 = c * cell_w + mx;
      w.x1 = (c + 1) * cell_w - mx;
      w.y0 = r * cell_h + my;
      w.y1 = (r + 1) * cell_h - my;
      doc.words.push_back(std::move(w));
    }

    if (params.render_images) {
      Image img;
      img.h = img.w = params.image_size;
      img.c = 1;
      img.pixels.assign(static_cast<size_t>(img.h) * img.w, 255);
      for (const auto& w : doc.words) {
        const int px0 = static_cast<int>(w.x0 / params.page_w * img.w);
        const int px1 = static_cast<int>(w.x1 / params.page_w * img.w);
        const int py0 = static_cast<int>(w.y0 / params.page_h * img.h);
        const int py1 = static_cast<int>(w.y1 / params.page_h * img.h);
        const uint8_t shade = static_cast<uint8_t>(word_hash(w.text) % 256);
        for (int y = std::max(0, py0); y < std::min(img.h, py1 + 1); ++y) {
          for (int x = std::max(0, px0); x < std::min(img.w, px1 + 1); ++x) {
            img.pixels[static_cast<size_t>(y) * img.w + x] = shade;
          }
        }
      }
      doc.image_path = doc.id + ".pgm";
      corpus.images.push_back(std::move(img));
    }
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

// --- spatial probes -------------------------------------------------------------------

std::string probe_question(ProbeRelation relation, const std::string& anchor) {
  switch (relation) {
    case ProbeRelation::LeftOf:
      return "what word is to the left of " + anchor + "?";
    case ProbeRelation::RightOf:
      return "what word is to the right of " + anchor + "?";
    case ProbeRelation::Above:
      return "what word is above " + anchor + "?";
    case ProbeRelation::Below:
      return "what word is below " + anchor + "?";
    case ProbeRelation::Topmost:
      return "what is the topmost word?";
  }
  return "";
}

namespace {

bool x_overlap(const OcrWord& a, const OcrWord& b) {
  return std::max(a.x0, b.x0) < std::min(a.x1, b.x1);
}

QaExample make_probe_qa(const OcrDocument& doc, ProbeRelation relation,
                        const std::string& anchor, const std::string& answer) {
  QaExample qa;
  qa.question = probe_question(relation, anchor);
  qa.answers.assign(10, answer);
  qa.ocr = doc;
  qa.image_path = doc.image_path;
  return qa;
}

}  // namespace

std::vector<SpatialProbe> generate_spatial_probes(const OcrDocument& doc) {
  std::vector<SpatialProbe> probes;
  if (doc.words.size() < 2) return probes;

  std::unordered_set<std::string> seen, duplicated;
  for (const auto& w : doc.words) {
    if (!seen.insert(lowercase(w.text)).second) duplicated.insert(lowercase(w.text));
  }
  const auto unique_word = [&](size_t i) {
    return duplicated.find(lowercase(doc.words[i].text)) == duplicated.end();
  };

  const auto lines = group_lines(doc.words);

  // Left / right neighbors on the same line.
  for (const auto& line : lines) {
    for (size_t p = 0; p < line.size(); ++p) {
      const size_t i = line[p];
      if (!unique_word(i)) continue;
      if (p > 0) {
        probes.push_back({ProbeRelation::LeftOf, doc.words[i].text,
                          doc.words[line[p - 1]].text,
                          make_probe_qa(doc, ProbeRelation::LeftOf, doc.words[i].text,
                                        doc.words[line[p - 1]].text)});
      }
      if (p + 1 < line.size()) {
        probes.push_back({ProbeRelation::RightOf, doc.words[i].text,
                          doc.words[line[p + 1]].text,
                          make_probe_qa(doc, ProbeRelation::RightOf, doc.words[i].text,
                                        doc.words[line[p + 1]].text)});
      }
    }
  }

  // Above / below: nearest vertically-overlapping neighbor in that direction.
  for (size_t i = 0; i < doc.words.size(); ++i) {
    if (!unique_word(i)) continue;
    const double cy = 0.5 * (doc.words[i].y0 + doc.words[i].y1);
    int best_above = -1, best_below = -1;
    double above_gap = 0, below_gap = 0;
    bool above_tie = false, below_tie = false;
    for (size_t j = 0; j < doc.words.size(); ++j) {
      if (j == i || !x_overlap(doc.words[i], doc.words[j])) continue;
      const double cj = 0.5 * (doc.words[j].y0 + doc.words[j].y1);
      if (same_line(doc.words[i], doc.words[j])) continue;
      if (cj < cy) {
        const double gap = cy - cj;
        if (best_above < 0 || gap < above_gap - 1e-9) {
          best_above = static_cast<int>(j);
          above_gap = gap;
          above_tie = false;
        } else if (std::abs(gap - above_gap) <= 1e-9) {
          above_tie = true;
        }
      } else if (cj > cy) {
        const double gap = cj - cy;
        if (best_below < 0 || gap < below_gap - 1e-9) {
          best_below = static_cast<int>(j);
          below_gap = gap;
          below_tie = false;
        } else if (std::abs(gap - below_gap) <= 1e-9) {
          below_tie = true;
        }
      }
    }
    if (best_above >= 0 && !above_tie) {
      probes.push_back({ProbeRelation::Above, doc.words[i].text,
                        doc.words[static_cast<size_t>(best_above)].text,
                        make_probe_qa(doc, ProbeRelation::Above, doc.words[i].text,
                                      doc.words[static_cast<size_t>(best_above)].text)});
    }
    if (best_below >= 0 && !below_tie) {
      probes.push_back({ProbeRelation::Below, doc.words[i].text,
                        doc.words[static_cast<size_t>(best_below)].text,
                        make_probe_qa(doc, ProbeRelation::Below, doc.words[i].text,
                                      doc.words[static_cast<size_t>(best_below)].text)});
    }
  }

  // Topmost, when a single word sits strictly above everything else.
  size_t top = 0;
  bool top_unique = true;
  for (size_t j = 1; j < doc.words.size(); ++j) {
    const double ct = 0.5 * (doc.words[top].y0 + doc.words[top].y1);
    const double cj = 0.5 * (doc.words[j].y0 + doc.words[j].y1);
    if (cj < ct - 1e-9) {
      top = j;
      top_unique = true;
    } else if (std::abs(cj - ct) <= 1e-9 ||
               same_line(doc.words[top], doc.words[j])) {
      top_unique = false;
    }
  }
  if (top_unique) {
    probes.push_back({ProbeRelation::Topmost, "", doc.words[top].text,
                      make_probe_qa(doc, ProbeRelation::Topmost, "", doc.words[top].text)});
  }
  return probes;
}

// --- images -------------------------------------------------------------------------

void save_pnm(const Image& img, const std::string& path) {
  if (img.c != 1 && img.c != 3) throw ValueError("save_pnm: channels must be 1 or 3");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write image " + path);
  f << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write to image " + path);
}

Image load_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image " + path);
  std::string magic;
  f >> magic;
  Image img;
  if (magic == "P5") {
    img.c = 1;
  } else if (magic == "P6") {
    img.c = 3;
  } else {
    throw FormatError("unsupported image magic '" + magic + "' in " + path);
  }
  int maxval = 0;
  f >> img.w >> img.h >> maxval;
  if (!f || img.w <= 0 || img.h <= 0 || maxval != 255) {
    throw FormatError("bad PNM header in " + path);
  }
  f.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<size_t>(img.w) * img.h * img.c);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw FormatError("truncated PNM payload in " + path);
  return img;
}

}  // namespace latr
