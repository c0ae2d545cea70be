#include "vqd/datafilter/filter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "vqd/dsp/mel.hpp"

namespace vqd {

using nlohmann::json;

std::u32string utf8_decode(const std::string& s) {
    std::u32string out;
    out.reserve(s.size());
    std::size_t i = 0;
    auto bad = [&] { return std::invalid_argument("malformed UTF-8 at byte " + std::to_string(i)); };
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            len = 1;
            cp = c;
        } else if ((c >> 5) == 0x6) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c >> 4) == 0xE) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c >> 3) == 0x1E) {
            len = 4;
            cp = c & 0x07;
        } else {
            throw bad();
        }
        if (i + len > s.size()) throw bad();
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc >> 6) != 0x2) throw bad();
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr char32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) throw bad();
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode(const std::u32string& s) {
    std::string out;
    for (char32_t cp : s) {
        if (cp < 0x80) {
            out += static_cast<char>(cp);
        } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else if (cp < 0x10000) {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else {
            out += static_cast<char>(0xF0 | (cp >> 18));
            out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        }
    }
    return out;
}

std::size_t edit_distance(const std::u32string& a, const std::u32string& b) {
    // one row over b
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

double cer(const std::string& reference, const std::string& hypothesis) {
    const auto ref = utf8_decode(reference);
    if (ref.empty()) throw std::invalid_argument("cer: empty reference");
    return static_cast<double>(edit_distance(ref, utf8_decode(hypothesis))) / static_cast<double>(ref.size());
}

namespace {

bool is_space(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f' || c == 0xA0 ||
           c == 0x3000 || (c >= 0x2000 && c <= 0x200B);
}

bool is_punct(char32_t c) {
    if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                         (c >= 0x7B && c <= 0x7E);
    return (c >= 0xA1 && c <= 0xBF && c != 0xAA && c != 0xB5 && c != 0xBA) || c == 0xD7 || c == 0xF7 ||
           (c >= 0x2010 && c <= 0x206F) || (c >= 0x3001 && c <= 0x303F) || (c >= 0xFF01 && c <= 0xFF0F) ||
           (c >= 0xFF1A && c <= 0xFF20) || (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65);
}

char32_t to_lower(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;  // Latin-1
    if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;  // Greek
    if (c >= 0x410 && c <= 0x42F) return c + 32;  // Cyrillic
    if (c >= 0x400 && c <= 0x40F) return c + 80;
    if (c >= 0xFF21 && c <= 0xFF3A) return c + 32;  // full-width Latin
    return c;
}

}  // namespace

std::string normalize_transcript(const std::string& s) {
    std::u32string out;
    bool pending_space = false;
    for (char32_t c : utf8_decode(s)) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (is_punct(c)) continue;
        if (pending_space) out.push_back(U' ');
        pending_space = false;
        out.push_back(to_lower(c));
    }
    return utf8_encode(out);
}

json to_json(const SampleRecord& r) {
    json j{{"id", r.id}, {"audio", r.audio}, {"text", r.text}};
    if (r.scored) {
        j["transcript_a"] = r.transcript_a;
        j["transcript_b"] = r.transcript_b;
        j["dnsmos"] = r.dnsmos;
        j["cer"] = r.cer;
        j["vad_proportion"] = r.vad_proportion;
        j["quality"] = r.quality;
    }
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

SampleRecord sample_record_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("record must be a JSON object");
    SampleRecord r;
    auto str = [&](const char* key, std::string& out, bool required) {
        if (!j.contains(key)) {
            if (required) throw std::invalid_argument(std::string("record is missing '") + key + "'");
            return;
        }
        if (!j.at(key).is_string()) throw std::invalid_argument(std::string("record field '") + key + "' must be a string");
        out = j.at(key).get<std::string>();
    };
    str("id", r.id, true);
    str("audio", r.audio, true);
    str("text", r.text, false);
    if (j.contains("quality")) {
        str("transcript_a", r.transcript_a, true);
        str("transcript_b", r.transcript_b, true);
        for (auto [key, out] : {std::pair{"dnsmos", &r.dnsmos}, std::pair{"cer", &r.cer},
                                std::pair{"vad_proportion", &r.vad_proportion}, std::pair{"quality", &r.quality}}) {
            if (!j.contains(key) || !j.at(key).is_number()) {
                throw std::invalid_argument(std::string("scored record needs numeric '") + key + "'");
            }
            *out = j.at(key).get<double>();
        }
        r.scored = true;
    }
    return r;
}

std::vector<SampleRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::vector<SampleRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(sample_record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

void write_records(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

ScorerSuite ScorerSuite::from_tables(std::map<std::string, std::string> transcripts_a,
                                     std::map<std::string, std::string> transcripts_b,
                                     std::map<std::string, double> quality) {
    auto text_lookup = [](std::map<std::string, std::string> table, std::string role) {
        return [table = std::move(table), role = std::move(role)](const ScoreInput& in) {
            auto it = table.find(in.record.id);
            if (it == table.end()) throw std::runtime_error(role + " has no answer for '" + in.record.id + "'");
            return it->second;
        };
    };
    ScorerSuite s;
    s.transcriber_a = text_lookup(std::move(transcripts_a), "transcriber_a");
    s.transcriber_b = text_lookup(std::move(transcripts_b), "transcriber_b");
    s.quality_model = [table = std::move(quality)](const ScoreInput& in) {
        auto it = table.find(in.record.id);
        if (it == table.end()) throw std::runtime_error("quality model has no answer for '" + in.record.id + "'");
        return it->second;
    };
    return s;
}

SampleRecord score_record(const SampleRecord& record, const ScorerSuite& suite, const ScoreOptions& opt) {
    SampleRecord r = record;
    r.scored = false;
    r.error.clear();
    try {
        if (!suite.transcriber_a || !suite.transcriber_b || !suite.quality_model) {
            throw std::invalid_argument("scorer suite is incomplete");
        }
        AudioBuffer audio;
        if (suite.load_audio) {
            audio = suite.load_audio(record);
        } else {
            const std::filesystem::path p(record.audio);
            audio = read_wav(p.is_absolute() || suite.audio_root.empty() ? p : suite.audio_root / p);
        }
        const ScoreInput in{r, audio};
        r.transcript_a = suite.transcriber_a(in);
        r.transcript_b = suite.transcriber_b(in);
        r.dnsmos = suite.quality_model(in);
        r.vad_proportion = suite.vad ? suite.vad(in) : silence_proportion(audio);
        if (!std::isfinite(r.dnsmos)) throw std::runtime_error("quality model returned a non-finite score");
        if (!(r.vad_proportion >= 0.0 && r.vad_proportion <= 1.0)) {
            throw std::runtime_error("vad proportion outside [0, 1]");
        }
        auto prep = [&](const std::string& s) { return opt.normalize ? normalize_transcript(s) : s; };
        const std::string a = prep(r.transcript_a), b = prep(r.transcript_b);
        if (opt.mode == CerMode::agreement) {
            r.cer = cer(a, b);
        } else {
            const std::string ref = prep(r.text);
            r.cer = 0.5 * (cer(ref, a) + cer(ref, b));
        }
        r.quality = r.dnsmos - r.cer;
        r.scored = true;
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    return r;
}

ScoreReport score_dataset(const std::vector<SampleRecord>& records, const ScorerSuite& suite, const ScoreOptions& opt,
                          std::size_t jobs) {
    ScoreReport rep;
    rep.records.resize(records.size());
    jobs = std::max<std::size_t>(1, std::min(jobs, records.size()));
    if (jobs == 1) {
        for (std::size_t i = 0; i < records.size(); ++i) rep.records[i] = score_record(records[i], suite, opt);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < jobs; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < records.size(); i += jobs) rep.records[i] = score_record(records[i], suite, opt);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (const auto& r : rep.records) rep.failed += r.scored ? 0 : 1;
    return rep;
}

std::vector<SampleRecord> select_records(const std::vector<SampleRecord>& scored, std::size_t top_k,
                                         double vad_threshold) {
    std::vector<SampleRecord> keep;
    for (const auto& r : scored) {
        if (r.scored && !(r.vad_proportion > vad_threshold)) keep.push_back(r);
    }
    std::sort(keep.begin(), keep.end(), [](const SampleRecord& a, const SampleRecord& b) {
        if (a.quality != b.quality) return a.quality > b.quality;
        return a.id < b.id;
    });
    if (keep.size() > top_k) keep.resize(top_k);
    return keep;
}

FilterResult filter_dataset(const std::vector<SampleRecord>& records, const ScorerSuite& suite, std::size_t top_k,
                            double vad_threshold, const ScoreOptions& opt, std::size_t jobs) {
    const ScoreReport rep = score_dataset(records, suite, opt, jobs);
    FilterResult out;
    out.failed = rep.failed;
    for (const auto& r : rep.records) {
        if (!r.scored) continue;
        ++out.scored;
        if (r.vad_proportion > vad_threshold) ++out.gated;
    }
    out.selected = select_records(rep.records, top_k, vad_threshold);
    return out;
}

std::map<std::string, json> ExternalScorer::run(const std::vector<SampleRecord>& records, const std::string& tag) const {
    const std::filesystem::path dir = work_dir.empty() ? std::filesystem::temp_directory_path() : work_dir;
    std::filesystem::create_directories(dir);
    const auto in_path = dir / (tag + "_request.jsonl");
    const auto out_path = dir / (tag + "_response.jsonl");
    {
        std::ofstream req(in_path, std::ios::binary);
        if (!req) throw std::runtime_error("cannot write scorer request " + in_path.string());
        for (const auto& r : records) req << json{{"id", r.id}, {"audio", r.audio}}.dump() << '\n';
    }
    std::string cmd = command;
    for (auto [key, value] : {std::pair<std::string, std::string>{"{in}", in_path.string()},
                              std::pair<std::string, std::string>{"{out}", out_path.string()}}) {
        for (std::size_t pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size())) {
            cmd.replace(pos, key.size(), value);
        }
    }
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("scorer command failed: " + cmd);
    std::ifstream resp(out_path);
    if (!resp) throw std::runtime_error("scorer wrote no response at " + out_path.string());
    std::map<std::string, json> answers;
    std::string line;
    while (std::getline(resp, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line);
        if (!j.is_object() || !j.contains("id") || !j.at("id").is_string()) {
            throw std::runtime_error("scorer response line lacks a string id: " + line);
        }
        std::string id = j.at("id").get<std::string>();
        answers[std::move(id)] = std::move(j);
    }
    return answers;
}

ScorerSuite external_suite(const std::vector<SampleRecord>& records, const ExternalScorer& transcriber_a,
                           const ExternalScorer& transcriber_b, const ExternalScorer& quality) {
    auto texts = [&](const ExternalScorer& s, const std::string& tag) {
        std::map<std::string, std::string> out;
        for (const auto& [id, j] : s.run(records, tag)) {
            if (j.contains("text") && j.at("text").is_string()) out[id] = j.at("text").get<std::string>();
        }
        return out;
    };
    std::map<std::string, double> scores;
    for (const auto& [id, j] : quality.run(records, "quality")) {
        if (j.contains("score") && j.at("score").is_number()) scores[id] = j.at("score").get<double>();
    }
    return ScorerSuite::from_tables(texts(transcriber_a, "transcriber_a"), texts(transcriber_b, "transcriber_b"),
                                    std::move(scores));
}

}  // namespace vqd
