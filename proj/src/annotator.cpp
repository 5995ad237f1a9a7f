#include "sersal/annotator.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

namespace sersal {

PromptText build_prompt(std::span<const std::string> cells, const FeatureSchema& schema) {
  std::string out = schema.role_preamble;
  out += ", please give a likelihood between 0 to 1 of ";
  out += schema.task_description;
  out += ':';
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const auto& col = schema.columns[c];
    out += " [";
    out += col.name;
    out += "] ";
    out += cells[c];
    if (col.unit) {
      out += " (";
      out += *col.unit;
      out += ')';
    }
    out += ';';
  }
  return PromptText{std::move(out)};
}

PromptText build_prompt(const Dataset& ds, std::size_t row) {
  const std::size_t f = ds.num_features();
  std::vector<std::string> cells(f);
  for (std::size_t c = 0; c < f; ++c) cells[c] = ds.cell_text(row, c);
  return build_prompt(cells, ds.schema());
}

double parse_confidence(std::string_view s) {
  const auto digit = [&](std::size_t i) {
    return i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]));
  };
  std::size_t i = 0;
  while (i < s.size()) {
    const bool starts = digit(i) || (s[i] == '.' && digit(i + 1));
    if (!starts) {
      ++i;
      continue;
    }
    const std::size_t begin = i;
    while (digit(i)) ++i;
    if (i < s.size() && s[i] == '.' && digit(i + 1)) {
      ++i;
      while (digit(i)) ++i;
    }
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
      std::size_t j = i + 1;
      if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
      if (digit(j)) {
        i = j;
        while (digit(i)) ++i;
      }
    }
    double value = 0.0;
    const auto res = std::from_chars(s.data() + begin, s.data() + i, value);
    if (res.ec != std::errc()) continue;
    if (begin > 0 && s[begin - 1] == '-') value = -value;
    std::size_t k = i;
    while (k < s.size() && s[k] == ' ') ++k;
    if (k < s.size() && s[k] == '%') value /= 100.0;
    if (value >= 0.0 && value <= 1.0) return value;
  }
  throw ParseError("no likelihood in [0, 1] found in response");
}

// ---------------------------------------------------------------------------
// SoftLabelSet

SoftLabelSet SoftLabelSet::from_positive(std::span<const double> positive, std::string source,
                                         int loop) {
  std::vector<Prob2> v;
  v.reserve(positive.size());
  for (double p : positive) v.push_back(Prob2{1.0 - p, p});
  return from_vectors(std::move(v), std::move(source), loop);
}

SoftLabelSet SoftLabelSet::from_vectors(std::vector<Prob2> vectors, std::string source,
                                        int loop) {
  SoftLabelSet s;
  s.hard_labels.reserve(vectors.size());
  for (const auto& p : vectors) s.hard_labels.push_back(p.argmax());
  s.confidences = std::move(vectors);
  s.source = std::move(source);
  s.loop = loop;
  return s;
}

std::vector<double> SoftLabelSet::positive() const {
  std::vector<double> out;
  out.reserve(confidences.size());
  for (const auto& p : confidences) out.push_back(p.pos);
  return out;
}

SoftLabelSet SoftLabelSet::hardened() const {
  std::vector<Prob2> v;
  v.reserve(size());
  for (int y : hard_labels) v.push_back(y ? Prob2{0.0, 1.0} : Prob2{1.0, 0.0});
  return from_vectors(std::move(v), source, loop);
}

void SoftLabelSet::validate() const {
  if (hard_labels.size() != confidences.size())
    throw DataError("soft label set: hard label count mismatch");
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const auto& p = confidences[i];
    if (!(p.neg >= 0.0 && p.neg <= 1.0 && p.pos >= 0.0 && p.pos <= 1.0) ||
        std::abs(p.neg + p.pos - 1.0) > 1e-9)
      throw DataError("soft label " + std::to_string(i) + " is off the simplex");
    if (hard_labels[i] != p.argmax())
      throw DataError("hard label " + std::to_string(i) + " disagrees with argmax");
  }
}

// ---------------------------------------------------------------------------
// Corpus

std::string render_likelihood(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", std::clamp(p, 0.0, 1.0));
  return buf;
}

std::string FinetuneCorpus::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    out += nlohmann::json{{"prompt", r.prompt.text}, {"completion", r.completion}}.dump();
    out += '\n';
  }
  return out;
}

FinetuneCorpus build_finetune_corpus(const Dataset& ds, const SoftLabelSet& sharpened) {
  if (sharpened.size() != ds.size())
    throw DataError("fine-tune corpus: " + std::to_string(sharpened.size()) +
                    " targets for " + std::to_string(ds.size()) + " rows");
  FinetuneCorpus corpus;
  corpus.records.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    FinetuneRecord r;
    r.row_id = ds.ids()[i];
    r.prompt = build_prompt(ds, i);
    r.target = sharpened.confidences[i].pos;
    r.completion = render_likelihood(r.target);
    const auto raw = ds.raw_values().row(i);
    r.features.assign(raw.begin(), raw.end());
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

std::shared_ptr<AnnotatorProvider> finetune(const AnnotatorProvider& provider,
                                            const FinetuneCorpus& corpus) {
  if (!provider.can_finetune())
    throw ProviderError("provider '" + provider.identity() + "' cannot be fine-tuned");
  return provider.finetune(corpus);
}

// ---------------------------------------------------------------------------
// Annotation

namespace {

enum class RowOutcome { Ok, Unparseable, Unreachable };

}  // namespace

AnnotationResult annotate_dataset(const AnnotatorProvider& provider, const Dataset& ds,
                                  const AnnotateOptions& options) {
  if (!provider.can_score())
    throw ProviderError("provider '" + provider.identity() + "' cannot score");
  const std::size_t n = ds.size();
  std::vector<double> positive(n, 0.5);
  std::vector<RowOutcome> outcome(n, RowOutcome::Ok);
  std::vector<std::string> last_error(n);
  const int attempts = std::max(1, options.retry_limit);
  const int threads = std::max(1, options.max_in_flight);

  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const PromptText prompt = build_prompt(ds, static_cast<std::size_t>(i));
    const AnnotationQuery q{ds.ids()[i], &prompt, ds.raw_values().row(i)};
    bool reached = false;
    for (int a = 0; a < attempts; ++a) {
      if (a > 0 && options.backoff_ms > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(options.backoff_ms << (a - 1)));
      try {
        const std::string text = provider.complete(q);
        reached = true;
        positive[i] = parse_confidence(text);
        outcome[i] = RowOutcome::Ok;
        break;
      } catch (const ParseError& e) {
        outcome[i] = RowOutcome::Unparseable;
        last_error[i] = e.what();
      } catch (const std::exception& e) {
        outcome[i] = reached ? RowOutcome::Unparseable : RowOutcome::Unreachable;
        last_error[i] = e.what();
      }
    }
    if (outcome[i] != RowOutcome::Ok) positive[i] = 0.5;
  }

  AnnotationResult result;
  std::vector<std::uint64_t> unreached;
  for (std::size_t i = 0; i < n; ++i) {
    if (outcome[i] == RowOutcome::Ok) continue;
    result.failed_ids.push_back(ds.ids()[i]);
    result.diagnostics.push_back("row " + std::to_string(ds.ids()[i]) + ": " + last_error[i]);
    if (outcome[i] == RowOutcome::Unreachable) unreached.push_back(ds.ids()[i]);
  }
  result.labels = SoftLabelSet::from_positive(positive, provider.identity(), options.loop);
  if (!unreached.empty()) {
    const std::string msg = "provider '" + provider.identity() + "' unreachable for " +
                            std::to_string(unreached.size()) + " of " + std::to_string(n) +
                            " rows after " + std::to_string(attempts) + " attempts";
    throw AnnotationAborted(msg, std::move(result), std::move(unreached));
  }
  return result;
}

}  // namespace sersal
