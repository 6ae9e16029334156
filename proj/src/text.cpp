#include "mtnat/text.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "mtnat/rng.hpp"

namespace mtnat::text {

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string join_ws(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Toy corpus
// ---------------------------------------------------------------------------

std::vector<std::string> toy_vocab_words(std::size_t vocab_size) {
    static const char* kCons = "bcdfgklmnprstvz";
    static const char* kVow = "aeiou";
    auto syllable = [&](std::size_t j) {
        std::string s;
        s += kCons[j % 15];
        s += kVow[(j / 15) % 5];
        return s;
    };
    if (vocab_size > 75 * 75)
        throw ConfigError("toy vocabulary limited to " + std::to_string(75 * 75) + " words");
    std::vector<std::string> words;
    words.reserve(vocab_size);
    for (std::size_t i = 0; i < vocab_size; ++i)
        words.push_back(syllable(i % 75) + syllable(i / 75));
    return words;
}

namespace {

std::map<std::string, std::string> derive_lexicon(const ToyTaskSpec& spec) {
    const auto words = toy_vocab_words(spec.vocab_size);
    std::vector<std::size_t> perm(words.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng = Rng::derive(spec.seed, 0x13c0);
    rng.shuffle(perm);
    std::map<std::string, std::string> map;
    for (std::size_t i = 0; i < words.size(); ++i) map[words[i]] = words[perm[i]];
    return map;
}

void check_bijective(const std::map<std::string, std::string>& lexicon,
                     const std::vector<std::string>& vocab) {
    std::set<std::string> images;
    for (const auto& w : vocab) {
        auto it = lexicon.find(w);
        if (it == lexicon.end())
            throw ConfigError("lexicon map is not total: missing word '" + w + "'");
        if (!images.insert(it->second).second)
            throw ConfigError("lexicon map is not injective: duplicate image '" + it->second +
                              "'");
    }
}

}  // namespace

std::string toy_target_for_map(const ToyTaskSpec& spec,
                               const std::map<std::string, std::string>& lexicon,
                               const std::string& source) {
    auto tokens = split_ws(source);
    switch (spec.kind) {
        case ToyTask::Copy:
            break;
        case ToyTask::Reverse:
            std::reverse(tokens.begin(), tokens.end());
            break;
        case ToyTask::Lexicon: {
            for (auto& t : tokens) {
                auto it = lexicon.find(t);
                if (it != lexicon.end()) t = it->second;
            }
            for (std::size_t i = 0; i + 1 < tokens.size(); i += 2)
                std::swap(tokens[i], tokens[i + 1]);
            break;
        }
    }
    return join_ws(tokens);
}

std::string toy_target_for(const ToyTaskSpec& spec, const std::string& source) {
    std::map<std::string, std::string> lexicon = spec.lexicon;
    if (spec.kind == ToyTask::Lexicon) {
        if (lexicon.empty()) lexicon = derive_lexicon(spec);
        check_bijective(lexicon, toy_vocab_words(spec.vocab_size));
    }
    return toy_target_for_map(spec, lexicon, source);
}

ParallelCorpus generate_toy_corpus(const ToyTaskSpec& spec, std::size_t n) {
    if (n == 0) throw ConfigError("generate_toy_corpus: n must be positive");
    if (spec.vocab_size == 0 || spec.min_len == 0 || spec.min_len > spec.max_len)
        throw ConfigError("generate_toy_corpus: invalid task spec");
    const auto words = toy_vocab_words(spec.vocab_size);
    std::map<std::string, std::string> lexicon = spec.lexicon;
    if (spec.kind == ToyTask::Lexicon) {
        if (lexicon.empty()) lexicon = derive_lexicon(spec);
        check_bijective(lexicon, words);
    }

    Rng rng(spec.seed);
    ParallelCorpus corpus;
    corpus.pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = static_cast<std::size_t>(
            rng.range(static_cast<std::int64_t>(spec.min_len),
                      static_cast<std::int64_t>(spec.max_len)));
        std::vector<std::string> tokens(len);
        for (auto& t : tokens) t = words[rng.below(words.size())];
        const std::string src = join_ws(tokens);
        corpus.pairs.emplace_back(src, toy_target_for_map(spec, lexicon, src));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// BPE
// ---------------------------------------------------------------------------

namespace {

// UTF-8 code points as separate symbols; malformed bytes pass through singly.
std::vector<std::string> utf8_chars(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if ((c & 0xE0) == 0xC0)
            len = 2;
        else if ((c & 0xF0) == 0xE0)
            len = 3;
        else if ((c & 0xF8) == 0xF0)
            len = 4;
        if (i + len > s.size()) len = 1;
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace

std::vector<std::string> bpe_word_symbols(const std::string& word) {
    auto symbols = utf8_chars(word);
    if (!symbols.empty()) symbols.back() += "</w>";
    return symbols;
}

BpeModel learn_bpe(const std::vector<std::string>& sentences, std::size_t num_merges) {
    if (sentences.empty()) throw ConfigError("learn_bpe: empty corpus");

    // word type -> frequency
    std::map<std::string, std::size_t> word_freq;
    for (const auto& s : sentences)
        for (const auto& w : split_ws(s)) ++word_freq[w];
    if (word_freq.empty()) throw ConfigError("learn_bpe: corpus has no tokens");

    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    words.reserve(word_freq.size());
    for (const auto& [w, f] : word_freq) words.emplace_back(bpe_word_symbols(w), f);

    BpeModel model;
    for (std::size_t step = 0; step < num_merges; ++step) {
        std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
        for (const auto& [symbols, freq] : words)
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
                pair_freq[{symbols[i], symbols[i + 1]}] += freq;
        if (pair_freq.empty()) break;

        // Highest frequency; ties resolved by the map's lexicographic order.
        auto best = pair_freq.begin();
        for (auto it = std::next(pair_freq.begin()); it != pair_freq.end(); ++it)
            if (it->second > best->second) best = it;

        const auto [left, right] = best->first;
        model.merges.emplace_back(left, right);
        const std::string joined = left + right;
        for (auto& [symbols, freq] : words) {
            std::vector<std::string> merged;
            merged.reserve(symbols.size());
            std::size_t i = 0;
            while (i < symbols.size()) {
                if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                    merged.push_back(joined);
                    i += 2;
                } else {
                    merged.push_back(symbols[i]);
                    ++i;
                }
            }
            symbols = std::move(merged);
        }
    }
    return model;
}

std::vector<std::string> apply_bpe(const BpeModel& model, const std::string& sentence) {
    std::vector<std::string> out;
    for (const auto& word : split_ws(sentence)) {
        auto symbols = bpe_word_symbols(word);
        for (const auto& [left, right] : model.merges) {
            if (symbols.size() < 2) break;
            std::vector<std::string> merged;
            merged.reserve(symbols.size());
            std::size_t i = 0;
            while (i < symbols.size()) {
                if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                    merged.push_back(left + right);
                    i += 2;
                } else {
                    merged.push_back(symbols[i]);
                    ++i;
                }
            }
            symbols = std::move(merged);
        }
        out.insert(out.end(), symbols.begin(), symbols.end());
    }
    return out;
}

std::string debpe(const std::vector<std::string>& tokens) {
    std::string glued;
    for (const auto& t : tokens) glued += t;
    // "</w>" closes a word
    std::string out;
    std::size_t i = 0;
    while (i < glued.size()) {
        if (glued.compare(i, 4, "</w>") == 0) {
            out += ' ';
            i += 4;
        } else {
            out += glued[i];
            ++i;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

void save_bpe(const BpeModel& model, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write BPE model to " + path);
    for (const auto& [a, b] : model.merges) os << a << ' ' << b << '\n';
}

BpeModel load_bpe(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read BPE model from " + path);
    BpeModel model;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos)
            throw IoError("malformed BPE merge line: '" + line + "'");
        model.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

namespace {
const std::vector<std::string> kReservedWithMask = {"<pad>", "<bos>", "<eos>", "<unk>",
                                                    "<mask>"};
const std::vector<std::string> kReservedNoMask = {"<pad>", "<bos>", "<eos>", "<unk>"};
}  // namespace

std::int32_t Vocabulary::id(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? UNK : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size())
        throw ContractError("vocabulary id " + std::to_string(id) + " out of range");
    return tokens[static_cast<std::size_t>(id)];
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& tokenized,
                             bool nat_capable) {
    std::map<std::string, std::size_t> freq;
    for (const auto& sent : tokenized)
        for (const auto& t : sent) ++freq[t];

    Vocabulary v;
    v.has_mask = nat_capable;
    v.tokens = nat_capable ? kReservedWithMask : kReservedNoMask;

    std::vector<std::pair<std::string, std::size_t>> sorted(freq.begin(), freq.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (auto& [tok, f] : sorted)
        if (std::find(v.tokens.begin(), v.tokens.end(), tok) == v.tokens.end())
            v.tokens.push_back(tok);

    for (std::size_t i = 0; i < v.tokens.size(); ++i)
        v.index[v.tokens[i]] = static_cast<std::int32_t>(i);
    return v;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write vocabulary to " + path);
    for (std::size_t i = 0; i < vocab.tokens.size(); ++i)
        os << vocab.tokens[i] << '\t' << i << '\n';
}

Vocabulary load_vocab(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read vocabulary from " + path);
    Vocabulary v;
    v.tokens.clear();
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw IoError("malformed vocab line: '" + line + "'");
        const std::string tok = line.substr(0, tab);
        const auto id = static_cast<std::size_t>(std::stoll(line.substr(tab + 1)));
        if (id != v.tokens.size())
            throw IoError("vocabulary ids are not dense at token '" + tok + "'");
        v.tokens.push_back(tok);
    }
    const auto& reserved =
        (v.tokens.size() >= 5 && v.tokens[4] == "<mask>") ? kReservedWithMask : kReservedNoMask;
    if (v.tokens.size() < reserved.size() ||
        !std::equal(reserved.begin(), reserved.end(), v.tokens.begin()))
        throw IoError("vocabulary is missing the reserved token block");
    v.has_mask = reserved.size() == 5;
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
        v.index[v.tokens[i]] = static_cast<std::int32_t>(i);
    return v;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<TokenizedPair> tokenize_corpus(const ParallelCorpus& corpus, const BpeModel& bpe,
                                           const Vocabulary& vocab) {
    std::vector<TokenizedPair> out;
    out.reserve(corpus.pairs.size());
    for (const auto& [src, tgt] : corpus.pairs) {
        TokenizedPair p;
        for (const auto& t : apply_bpe(bpe, src)) p.src.push_back(vocab.id(t));
        for (const auto& t : apply_bpe(bpe, tgt)) p.tgt.push_back(vocab.id(t));
        out.push_back(std::move(p));
    }
    return out;
}

BatchPlan build_batches(const std::vector<TokenizedPair>& pairs, const Vocabulary& vocab,
                        std::size_t batch_size, std::size_t max_len, std::uint64_t seed) {
    if (batch_size == 0) throw ConfigError("build_batches: batch_size must be positive");
    if (vocab.size() < vocab.reserved_count() || vocab.token(Vocabulary::PAD) != "<pad>")
        throw ConfigError("build_batches: vocabulary is missing reserved tokens");

    std::vector<std::size_t> order;
    BatchPlan plan;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].src.empty() || pairs[i].tgt.empty()) {
            ++plan.skipped;
            continue;
        }
        if (pairs[i].src.size() > max_len || pairs[i].tgt.size() > max_len) {
            ++plan.skipped;
            continue;
        }
        order.push_back(i);
    }
    Rng rng(seed);
    rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        Batch b;
        b.batch_size = end - start;
        for (std::size_t r = start; r < end; ++r) {
            b.src_len = std::max(b.src_len, pairs[order[r]].src.size());
            b.tgt_len = std::max(b.tgt_len, pairs[order[r]].tgt.size());
        }
        const std::size_t S = b.src_len, T = b.tgt_len;
        b.src.assign(b.batch_size * S, Vocabulary::PAD);
        b.src_pad.assign(b.batch_size * S, 1);
        b.tgt.assign(b.batch_size * T, Vocabulary::PAD);
        b.tgt_pad.assign(b.batch_size * T, 1);
        b.at_in.assign(b.batch_size * (T + 1), Vocabulary::PAD);
        b.at_out.assign(b.batch_size * (T + 1), Vocabulary::PAD);
        b.gold_len.resize(b.batch_size);

        for (std::size_t r = start; r < end; ++r) {
            const auto& p = pairs[order[r]];
            const std::size_t row = r - start;
            for (std::size_t j = 0; j < p.src.size(); ++j) {
                b.src[row * S + j] = p.src[j];
                b.src_pad[row * S + j] = 0;
            }
            for (std::size_t j = 0; j < p.tgt.size(); ++j) {
                b.tgt[row * T + j] = p.tgt[j];
                b.tgt_pad[row * T + j] = 0;
            }
            b.gold_len[row] = p.tgt.size();
            // BOS y1..yn [PAD...]  ->  y1..yn EOS [PAD...]
            b.at_in[row * (T + 1)] = Vocabulary::BOS;
            for (std::size_t j = 0; j < p.tgt.size(); ++j) {
                b.at_in[row * (T + 1) + j + 1] = p.tgt[j];
                b.at_out[row * (T + 1) + j] = p.tgt[j];
            }
            b.at_out[row * (T + 1) + p.tgt.size()] = Vocabulary::EOS;
        }
        plan.batches.push_back(std::move(b));
    }
    return plan;
}

BatchPlan build_batches(const ParallelCorpus& corpus, const BpeModel& bpe,
                        const Vocabulary& vocab, std::size_t batch_size, std::size_t max_len,
                        std::uint64_t seed) {
    return build_batches(tokenize_corpus(corpus, bpe, vocab), vocab, batch_size, max_len, seed);
}

// ---------------------------------------------------------------------------
// Corpus files
// ---------------------------------------------------------------------------

void save_corpus(const ParallelCorpus& corpus, const std::string& prefix) {
    std::ofstream src(prefix + ".src"), tgt(prefix + ".tgt");
    if (!src || !tgt) throw IoError("cannot write corpus files at prefix " + prefix);
    for (const auto& [s, t] : corpus.pairs) {
        src << s << '\n';
        tgt << t << '\n';
    }
}

ParallelCorpus load_corpus(const std::string& prefix) {
    std::ifstream src(prefix + ".src"), tgt(prefix + ".tgt");
    if (!src || !tgt) throw IoError("cannot read corpus files at prefix " + prefix);
    ParallelCorpus corpus;
    std::string s, t;
    while (std::getline(src, s)) {
        if (!std::getline(tgt, t))
            throw IoError("corpus files at " + prefix + " have unequal line counts");
        if (s.empty() || t.empty())
            throw IoError("corpus at " + prefix + " contains an empty sentence");
        corpus.pairs.emplace_back(s, t);
    }
    if (std::getline(tgt, t))
        throw IoError("corpus files at " + prefix + " have unequal line counts");
    if (corpus.pairs.empty()) throw IoError("corpus at " + prefix + " is empty");
    return corpus;
}

}  // namespace mtnat::text
