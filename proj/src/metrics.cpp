#include "storylogic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "text_util.hpp"

namespace storylogic {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) noexcept {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) noexcept {
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

using NgramCounts = std::map<std::vector<std::string>, std::uint64_t>;

NgramCounts ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

std::uint64_t ngram_total(std::size_t length, std::size_t n) noexcept {
    return length >= n ? length - n + 1 : 0;
}

} // namespace

ClassCounts& ClassCounts::operator+=(const ClassCounts& other) noexcept {
    true_positive += other.true_positive;
    false_positive += other.false_positive;
    false_negative += other.false_negative;
    return *this;
}

void ConfusionTally::add(int gold, int predicted) {
    if (gold == predicted) {
        ++counts_[gold].true_positive;
    } else {
        ++counts_[predicted].false_positive;
        ++counts_[gold].false_negative;
    }
}

ClassCounts ConfusionTally::counts(int cls) const {
    auto it = counts_.find(cls);
    return it == counts_.end() ? ClassCounts{} : it->second;
}

ConfusionTally& ConfusionTally::operator+=(const ConfusionTally& other) {
    for (const auto& [cls, c] : other.counts_) counts_[cls] += c;
    return *this;
}

PRF prf_from_counts(const ClassCounts& c) noexcept {
    PRF out;
    out.precision = ratio(c.true_positive, c.true_positive + c.false_positive);
    out.recall = ratio(c.true_positive, c.true_positive + c.false_negative);
    out.f1 = harmonic(out.precision, out.recall);
    return out;
}

PRF micro_prf(const ConfusionTally& tally, const std::set<int>& exclude) {
    ClassCounts pooled;
    for (const auto& [cls, c] : tally.classes()) {
        if (!exclude.contains(cls)) pooled += c;
    }
    return prf_from_counts(pooled);
}

PRF macro_prf(const ConfusionTally& tally, const std::set<int>& exclude) {
    PRF sum;
    std::size_t n = 0;
    for (const auto& [cls, c] : tally.classes()) {
        if (exclude.contains(cls)) continue;
        const PRF p = prf_from_counts(c);
        sum.precision += p.precision;
        sum.recall += p.recall;
        sum.f1 += p.f1;
        ++n;
    }
    if (n == 0) return {};
    const double d = static_cast<double>(n);
    return {sum.precision / d, sum.recall / d, sum.f1 / d};
}

VerdictReport verdict_report(const std::vector<std::pair<GapVerdict, GapVerdict>>& pairs) {
    VerdictReport report;
    report.count = pairs.size();
    for (const auto& [gold, predicted] : pairs) {
        report.tally.declare(gold.value());
        report.tally.add(gold.value(), predicted.value());
    }
    for (const auto& [cls, counts] : report.tally.classes()) {
        report.per_class[cls] = prf_from_counts(counts);
    }
    report.micro = micro_prf(report.tally);
    report.macro = macro_prf(report.tally);
    return report;
}

EmotionReport emotion_report(const std::vector<std::pair<EmotionAnnotation, EmotionAnnotation>>& pairs,
                             bool include_none) {
    EmotionReport report;
    report.count = pairs.size();
    report.include_none = include_none;
    std::size_t affected_hits = 0;
    for (const auto& [gold, predicted] : pairs) {
        report.tally.declare(static_cast<int>(gold.emotion));
        report.tally.add(static_cast<int>(gold.emotion), static_cast<int>(predicted.emotion));
        if (gold.affected == predicted.affected) ++affected_hits;
    }
    for (const auto& [cls, counts] : report.tally.classes()) {
        report.per_label[static_cast<EmotionLabel>(cls)] = prf_from_counts(counts);
    }
    std::set<int> exclude;
    if (!include_none) exclude.insert(static_cast<int>(EmotionLabel::none));
    report.micro = micro_prf(report.tally, exclude);
    report.affected_accuracy = ratio(affected_hits, pairs.size());
    return report;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) tokens.push_back(std::move(current));
        current.clear();
    };
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::isspace(u)) {
            flush();
        } else if (u < 0x80 && std::ispunct(u)) {
            flush();
            tokens.emplace_back(1, c);
        } else {
            current.push_back(detail::to_lower(c));
        }
    }
    flush();
    return tokens;
}

BleuStats& BleuStats::operator+=(const BleuStats& other) noexcept {
    for (std::size_t n = 0; n < 4; ++n) {
        matched[n] += other.matched[n];
        total[n] += other.total[n];
    }
    candidate_length += other.candidate_length;
    reference_length += other.reference_length;
    return *this;
}

BleuStats bleu_stats(const std::vector<std::string>& candidate,
                     const std::vector<std::vector<std::string>>& references) {
    BleuStats stats;
    stats.candidate_length = candidate.size();
    if (!references.empty()) {
        // Closest reference length; the shorter one on ties.
        std::size_t best = references.front().size();
        for (const auto& ref : references) {
            const auto d = [&](std::size_t len) {
                return len > candidate.size() ? len - candidate.size() : candidate.size() - len;
            };
            if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
        }
        stats.reference_length = best;
    }
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto cand = ngrams(candidate, n);
        NgramCounts max_ref;
        for (const auto& ref : references) {
            for (const auto& [gram, count] : ngrams(ref, n)) {
                auto& slot = max_ref[gram];
                slot = std::max(slot, count);
            }
        }
        std::uint64_t matched = 0;
        for (const auto& [gram, count] : cand) {
            auto it = max_ref.find(gram);
            if (it != max_ref.end()) matched += std::min(count, it->second);
        }
        stats.matched[n - 1] = matched;
        stats.total[n - 1] = ngram_total(candidate.size(), n);
    }
    return stats;
}

double bleu_from_stats(const BleuStats& stats, int max_n) {
    if (max_n < 1 || max_n > 4) throw InvariantError("BLEU order must be 1..4");
    if (stats.candidate_length == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const auto idx = static_cast<std::size_t>(n - 1);
        double p;
        if (stats.total[idx] == 0 && ngram_total(stats.reference_length, static_cast<std::size_t>(n)) == 0) {
            // Neither side is long enough for this order: nothing to penalize.
            p = 1.0;
        } else if (stats.matched[idx] == 0) {
            p = kBleuEpsilon / static_cast<double>(std::max<std::uint64_t>(stats.total[idx], 1));
        } else {
            p = static_cast<double>(stats.matched[idx]) / static_cast<double>(stats.total[idx]);
        }
        log_sum += std::log(p) / max_n;
    }
    const double c = static_cast<double>(stats.candidate_length);
    const double r = static_cast<double>(stats.reference_length);
    const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
    return 100.0 * brevity * std::exp(log_sum);
}

double bleu(std::string_view candidate, const std::vector<std::string>& references, int max_n,
            std::string* warning) {
    const auto cand = tokenize(candidate);
    if (cand.empty()) {
        if (warning) *warning = "empty candidate scored 0";
        return 0.0;
    }
    std::vector<std::vector<std::string>> refs;
    refs.reserve(references.size());
    for (const auto& r : references) refs.push_back(tokenize(r));
    return bleu_from_stats(bleu_stats(cand, refs), max_n);
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> row(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            row[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
        }
        std::swap(prev, row);
    }
    return prev[b.size()];
}

PRF rouge_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                 RougeVariant variant) {
    if (candidate.empty() || reference.empty()) return {};
    std::uint64_t overlap = 0;
    std::uint64_t cand_total = 0;
    std::uint64_t ref_total = 0;
    if (variant == RougeVariant::rougeL) {
        overlap = lcs_length(candidate, reference);
        cand_total = candidate.size();
        ref_total = reference.size();
    } else {
        const std::size_t n = variant == RougeVariant::rouge1 ? 1 : 2;
        cand_total = ngram_total(candidate.size(), n);
        ref_total = ngram_total(reference.size(), n);
        if (cand_total == 0 && ref_total == 0) {
            // Too short for the order on both sides.
            return candidate == reference ? PRF{1.0, 1.0, 1.0} : PRF{};
        }
        const auto ref = ngrams(reference, n);
        for (const auto& [gram, count] : ngrams(candidate, n)) {
            auto it = ref.find(gram);
            if (it != ref.end()) overlap += std::min(count, it->second);
        }
    }
    PRF out;
    out.precision = ratio(overlap, cand_total);
    out.recall = ratio(overlap, ref_total);
    out.f1 = harmonic(out.precision, out.recall);
    return out;
}

PRF rouge(std::string_view candidate, std::string_view reference, RougeVariant variant,
          std::string* warning) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (cand.empty() || ref.empty()) {
        if (warning) *warning = "empty text scored 0";
        return {};
    }
    return rouge_tokens(cand, ref, variant);
}

VadLexicon::VadLexicon(std::unordered_map<std::string, VadValues> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw InvariantError("VAD lexicon is empty");
    for (const auto& [word, values] : entries_) {
        for (double v : values) {
            if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("VAD value for '" + word + "' outside [0, 1]");
        }
    }
}

VadLexicon VadLexicon::parse(std::string_view text) {
    std::unordered_map<std::string, VadValues> entries;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::stringstream row(line);
        std::string field;
        while (std::getline(row, field, '\t')) fields.push_back(field);
        if (fields.size() != 6) throw CorpusError(line_no, line, "expected 6 tab-separated fields");
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        VadValues values{};
        for (std::size_t i = 0; i < 5; ++i) {
            try {
                std::size_t used = 0;
                values[i] = std::stod(fields[i + 1], &used);
                if (used != fields[i + 1].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw CorpusError(line_no, line, "value '" + fields[i + 1] + "' is not a number");
            }
            if (!(values[i] >= 0.0 && values[i] <= 1.0)) {
                throw CorpusError(line_no, line, "value outside [0, 1]");
            }
        }
        entries[detail::lower(detail::trim(fields[0]))] = values;
    }
    if (!header_seen) throw CorpusError(0, "", "lexicon has no header line");
    if (entries.empty()) throw CorpusError(line_no, "", "lexicon has no entries");
    return VadLexicon(std::move(entries));
}

VadLexicon VadLexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open lexicon '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

const VadValues* VadLexicon::find(std::string_view word) const {
    auto it = entries_.find(std::string(word));
    return it == entries_.end() ? nullptr : &it->second;
}

std::optional<VadValues> VadLexicon::profile(std::string_view sentence) const {
    VadValues sum{};
    std::size_t hits = 0;
    for (const auto& token : tokenize(sentence)) {
        if (const auto* v = find(token)) {
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += (*v)[i];
            ++hits;
        }
    }
    if (hits == 0) return std::nullopt;
    for (auto& s : sum) s /= static_cast<double>(hits);
    return sum;
}

VadDeviation vad_deviation(std::string_view candidate, std::string_view reference, const VadLexicon& lexicon) {
    if (lexicon.size() == 0) throw InvariantError("VAD lexicon is empty");
    VadDeviation out;
    const auto c = lexicon.profile(candidate);
    const auto r = lexicon.profile(reference);
    if (!c || !r) return out;
    auto dev = [&](std::size_t dim) { return std::abs((*c)[dim] - (*r)[dim]); };
    out.values[0] = dev(kValence);
    out.values[1] = dev(kArousal);
    out.values[2] = dev(kDominance);
    out.values[3] = (*out.values[0] + *out.values[1] + *out.values[2]) / 3.0;
    out.values[4] = dev(kAoA);
    out.values[5] = dev(kConcreteness);
    return out;
}

void VadAggregate::add(const VadDeviation& deviation) {
    for (std::size_t i = 0; i < 6; ++i) {
        if (deviation.values[i]) {
            sum[i] += *deviation.values[i];
            ++count[i];
        }
    }
}

std::array<std::optional<double>, 6> VadAggregate::mean() const {
    std::array<std::optional<double>, 6> out;
    for (std::size_t i = 0; i < 6; ++i) {
        if (count[i] > 0) out[i] = sum[i] / static_cast<double>(count[i]);
    }
    return out;
}

void GenerationEvaluator::add(std::string_view candidate, std::string_view reference) {
    ++count_;
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (cand.empty()) warnings_.push_back("instance " + std::to_string(count_) + ": empty candidate");
    if (ref.empty()) warnings_.push_back("instance " + std::to_string(count_) + ": empty reference");

    if (!cand.empty()) {
        const auto stats = bleu_stats(cand, {ref});
        bleu_sum_[0] += bleu_from_stats(stats, 1);
        bleu_sum_[1] += bleu_from_stats(stats, 2);
        bleu_sum_[2] += bleu_from_stats(stats, 4);
        pooled_ += stats;
    } else {
        BleuStats empty;
        empty.reference_length = ref.size();
        pooled_ += empty;
    }
    const RougeVariant variants[] = {RougeVariant::rouge1, RougeVariant::rouge2, RougeVariant::rougeL};
    for (std::size_t i = 0; i < 3; ++i) {
        const PRF p = rouge_tokens(cand, ref, variants[i]);
        rouge_sum_[i].precision += p.precision;
        rouge_sum_[i].recall += p.recall;
        rouge_sum_[i].f1 += p.f1;
    }
    if (lexicon_) vad_.add(vad_deviation(candidate, reference, *lexicon_));
}

GenerationScores GenerationEvaluator::finish() const {
    GenerationScores out;
    out.count = count_;
    out.warnings = warnings_;
    if (count_ == 0) return out;
    const double n = static_cast<double>(count_);
    out.bleu1 = bleu_sum_[0] / n;
    out.bleu2 = bleu_sum_[1] / n;
    out.bleu4 = bleu_sum_[2] / n;
    auto avg = [n](const PRF& s) { return PRF{s.precision / n, s.recall / n, s.f1 / n}; };
    out.rouge1 = avg(rouge_sum_[0]);
    out.rouge2 = avg(rouge_sum_[1]);
    out.rougeL = avg(rouge_sum_[2]);
    out.corpus_bleu1 = bleu_from_stats(pooled_, 1);
    out.corpus_bleu2 = bleu_from_stats(pooled_, 2);
    out.corpus_bleu4 = bleu_from_stats(pooled_, 4);
    if (lexicon_) out.vad = vad_.mean();
    return out;
}

} // namespace storylogic
