#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aria/error.hpp"
#include "aria/rng.hpp"
#include "aria/score.hpp"
#include "aria/wav.hpp"

namespace aria {

/// Synthetic corpus generator settings. Phoneme id 0 is reserved for silence;
/// phoneme_count counts the voiced symbols, so the inventory size is
/// phoneme_count + 1.
struct GenCorpusConfig {
    int songs = 10;
    int phoneme_count = 16;
    std::vector<int> pitch_set = {57, 59, 61, 64, 66, 69, 71, 73, 76, 78, 81};  // A-major pentatonic
    int note_dur_min = 12;  // frames
    int note_dur_max = 60;
    int sample_rate = 16000;
    int hop_size = 128;
    std::uint64_t seed = 1234;
    int notes_min = 4;
    int notes_max = 10;
    double rest_prob = 0.12;
    int max_phonemes_per_note = 3;

    int inventory_size() const { return phoneme_count + 1; }

    void validate() const {
        if (songs < 1) throw ConfigError("gen_corpus: songs must be >= 1");
        if (phoneme_count < 1) throw ConfigError("gen_corpus: empty phoneme inventory");
        if (pitch_set.empty()) throw ConfigError("gen_corpus: empty pitch set");
        for (int p : pitch_set)
            if (p < 1 || p > 127) throw ConfigError("gen_corpus: pitch " + std::to_string(p) + " outside [1,127]");
        if (note_dur_min < 1 || note_dur_max < note_dur_min)
            throw ConfigError("gen_corpus: bad note duration range");
        if (max_phonemes_per_note < 1 || note_dur_min < max_phonemes_per_note)
            throw ConfigError("gen_corpus: note_dur_min must cover max_phonemes_per_note");
        if (sample_rate < 1 || hop_size < 1) throw ConfigError("gen_corpus: bad sample_rate/hop_size");
        if (notes_min < 1 || notes_max < notes_min) throw ConfigError("gen_corpus: bad notes range");
        if (rest_prob < 0.0 || rest_prob > 0.9) throw ConfigError("gen_corpus: rest_prob outside [0, 0.9]");
    }
};

namespace detail {

/// Fixed spectral envelope of one phoneme: harmonic rolloff plus two formant
/// bumps. Deterministic in the phoneme id alone, shared across corpora.
struct PhonemeEnvelope {
    double decay = 1.0;
    double formant_hz[2] = {0.0, 0.0};
    double formant_width[2] = {1.0, 1.0};
    double formant_gain[2] = {0.0, 0.0};
    double loudness = 1.0;

    double harmonic_amp(int k, double f0) const {
        const double f = k * f0;
        double a = std::pow(static_cast<double>(k), -decay);
        for (int i = 0; i < 2; ++i) {
            const double d = (f - formant_hz[i]) / formant_width[i];
            a *= 1.0 + formant_gain[i] * std::exp(-0.5 * d * d);
        }
        return std::min(a, 1.5);
    }
};

inline PhonemeEnvelope phoneme_envelope(int phoneme_id) {
    Rng rng(splitmix64(0x70686f6e656d65ull ^ static_cast<std::uint64_t>(phoneme_id) * 0x9e3779b9ull));
    PhonemeEnvelope env;
    env.decay = rng.uniform(0.75, 1.35);
    for (int i = 0; i < 2; ++i) {
        env.formant_hz[i] = rng.uniform(300.0, 3000.0);
        env.formant_width[i] = rng.uniform(150.0, 500.0);
        env.formant_gain[i] = rng.uniform(0.5, 2.0);
    }
    env.loudness = rng.uniform(0.85, 1.15);
    return env;
}

/// Random positive integer partition of total into parts entries.
inline std::vector<int> random_partition(int total, int parts, Rng& rng) {
    std::vector<int> cuts;
    while (static_cast<int>(cuts.size()) < parts - 1) {
        const int c = static_cast<int>(rng.uniform_int(1, total - 1));
        if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
    }
    std::sort(cuts.begin(), cuts.end());
    std::vector<int> out;
    int prev = 0;
    for (int c : cuts) {
        out.push_back(c - prev);
        prev = c;
    }
    out.push_back(total - prev);
    return out;
}

}  // namespace detail

/// Generate one song: random pentatonic note sequence, 1-3 phonemes per note,
/// harmonic-source audio with per-phoneme spectral envelopes, and the exact
/// score-derived F0 reference.
inline CorpusEntry generate_song(const GenCorpusConfig& cfg, std::uint64_t song_seed) {
    Rng rng(song_seed);
    CorpusEntry entry;
    MusicScore& score = entry.score;

    const int n_notes = static_cast<int>(rng.uniform_int(cfg.notes_min, cfg.notes_max));
    for (int i = 0; i < n_notes; ++i) {
        const bool rest = rng.uniform() < cfg.rest_prob;
        const int dur = static_cast<int>(rng.uniform_int(cfg.note_dur_min, cfg.note_dur_max));
        if (rest) {
            score.phonemes.push_back(0);
            score.note_pitch.push_back(0);
            score.note_dur.push_back(dur);
            score.phn_dur.push_back(dur);
            continue;
        }
        const int pitch = cfg.pitch_set[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(cfg.pitch_set.size()) - 1))];
        const int n_ph = static_cast<int>(rng.uniform_int(1, cfg.max_phonemes_per_note));
        const std::vector<int> parts = detail::random_partition(dur, n_ph, rng);
        for (int k = 0; k < n_ph; ++k) {
            score.phonemes.push_back(static_cast<int>(rng.uniform_int(1, cfg.phoneme_count)));
            score.note_pitch.push_back(pitch);
            score.note_dur.push_back(dur);
            score.phn_dur.push_back(parts[static_cast<std::size_t>(k)]);
        }
    }

    entry.f0_ref = score_f0_ref(score);
    const int total_frames = score.total_frames();
    const std::int64_t n_samples = static_cast<std::int64_t>(total_frames) * cfg.hop_size;
    entry.audio.sample_rate = cfg.sample_rate;
    entry.audio.samples.assign(static_cast<std::size_t>(n_samples), 0.0f);

    // Harmonic source with continuous fundamental phase; each phoneme segment
    // carries its own envelope and raised-cosine attack/release ramps.
    std::vector<double> x(static_cast<std::size_t>(n_samples), 0.0);
    double phase = 0.0;
    std::int64_t seg_start = 0;
    for (int i = 0; i < score.size(); ++i) {
        const std::int64_t seg_len = static_cast<std::int64_t>(score.phn_dur[i]) * cfg.hop_size;
        const int pitch = score.note_pitch[i];
        if (pitch > 0) {
            const double f0 = midi_to_hz(pitch);
            const detail::PhonemeEnvelope env = detail::phoneme_envelope(score.phonemes[i]);
            const int n_harm = std::min(24, static_cast<int>(0.45 * cfg.sample_rate / f0));
            std::vector<double> amp(static_cast<std::size_t>(n_harm) + 1, 0.0);
            for (int k = 1; k <= n_harm; ++k) amp[static_cast<std::size_t>(k)] = env.harmonic_amp(k, f0);
            const double ramp = std::min<double>(0.008 * cfg.sample_rate, seg_len / 4.0);
            const double dphase = 2.0 * M_PI * f0 / cfg.sample_rate;
            for (std::int64_t s = 0; s < seg_len; ++s) {
                // Chebyshev recurrence over harmonics of the running phase
                const double c1 = std::cos(phase), s1 = std::sin(phase);
                double sk_prev = 0.0, sk = s1;
                double v = 0.0;
                for (int k = 1; k <= n_harm; ++k) {
                    v += amp[static_cast<std::size_t>(k)] * sk;
                    const double sk_next = 2.0 * c1 * sk - sk_prev;
                    sk_prev = sk;
                    sk = sk_next;
                }
                double e = env.loudness;
                if (static_cast<double>(s) < ramp) e *= 0.5 * (1.0 - std::cos(M_PI * s / ramp));
                if (static_cast<double>(seg_len - 1 - s) < ramp)
                    e *= 0.5 * (1.0 - std::cos(M_PI * (seg_len - 1 - s) / ramp));
                x[static_cast<std::size_t>(seg_start + s)] = e * v;
                phase += dphase;
                if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;
            }
        }
        seg_start += seg_len;
    }

    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    const double gain = peak > 0.0 ? 0.85 / peak : 0.0;
    // quantize through 16-bit PCM so in-memory samples match a WAV round trip
    for (std::size_t s = 0; s < x.size(); ++s)
        entry.audio.samples[s] =
            std::max(static_cast<float>(float_to_pcm16(static_cast<float>(x[s] * gain))) / 32767.0f, -1.0f);
    return entry;
}

/// Deterministic synthetic corpus: per-song seeds derive from (seed, index).
inline std::vector<CorpusEntry> generate_synthetic_corpus(const GenCorpusConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::vector<CorpusEntry> entries;
    entries.reserve(static_cast<std::size_t>(cfg.songs));
    for (int i = 0; i < cfg.songs; ++i)
        entries.push_back(generate_song(cfg, derive_seed(seed, static_cast<std::uint64_t>(i))));
    return entries;
}

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s, int line_no) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
        }
    }
    if (out.empty()) throw ParseError("manifest line " + std::to_string(line_no) + ": empty integer list");
    return out;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace detail

/// Write entries as a manifest plus per-song WAVs under out_dir.
/// Returns the manifest path.
inline std::string write_corpus(const std::vector<CorpusEntry>& entries, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "wavs");
    std::ostringstream manifest;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "song%04zu.wav", i);
        const std::string rel = std::string("wavs/") + name;
        write_wav((fs::path(out_dir) / rel).string(), entries[i].audio);
        const MusicScore& s = entries[i].score;
        manifest << "phonemes=" << detail::join_ints(s.phonemes)
                 << " note_pitch=" << detail::join_ints(s.note_pitch)
                 << " note_dur=" << detail::join_ints(s.note_dur);
        if (s.has_durations()) manifest << " phn_dur=" << detail::join_ints(s.phn_dur);
        manifest << " audio=" << rel << "\n";
    }
    const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
    std::ofstream f(manifest_path, std::ios::binary);
    if (!f) throw Error("cannot write manifest: " + manifest_path);
    f << manifest.str();
    return manifest_path;
}

/// Parse a score record from one manifest line (audio not loaded here).
inline MusicScore parse_score_line(const std::string& line, int line_no, std::string* audio_rel = nullptr) {
    MusicScore score;
    std::stringstream ss(line);
    std::string tok;
    while (ss >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected key=value, got '" + tok + "'");
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "phonemes") score.phonemes = detail::parse_int_list(val, line_no);
        else if (key == "note_pitch") score.note_pitch = detail::parse_int_list(val, line_no);
        else if (key == "note_dur") score.note_dur = detail::parse_int_list(val, line_no);
        else if (key == "phn_dur") score.phn_dur = detail::parse_int_list(val, line_no);
        else if (key == "audio") { if (audio_rel) *audio_rel = val; }
        else throw ParseError("manifest line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (score.phonemes.empty())
        throw ParseError("manifest line " + std::to_string(line_no) + ": missing phonemes field");
    try {
        validate_score(score);
    } catch (const ValidationError& e) {
        throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    return score;
}

/// Parse a corpus manifest. hop_size > 0 additionally checks that labeled
/// durations match the audio length to within one hop, and fills f0_ref from
/// the score.
inline std::vector<CorpusEntry> parse_corpus(const std::string& manifest_path, int hop_size = 0) {
    namespace fs = std::filesystem;
    std::ifstream f(manifest_path);
    if (!f) throw ParseError("cannot open manifest: " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    std::vector<CorpusEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::string audio_rel;
        CorpusEntry entry;
        entry.score = parse_score_line(line, line_no, &audio_rel);
        if (audio_rel.empty())
            throw ParseError("manifest line " + std::to_string(line_no) + ": missing audio field");
        entry.audio = read_wav((base / audio_rel).string());
        if (entry.score.has_durations()) {
            if (hop_size > 0) {
                const std::int64_t expect = static_cast<std::int64_t>(entry.score.total_frames()) * hop_size;
                if (std::abs(expect - entry.audio.length()) > hop_size)
                    throw ValidationError("manifest line " + std::to_string(line_no) + ": audio length " +
                                          std::to_string(entry.audio.length()) + " does not match " +
                                          std::to_string(expect) + " frames*hop within one hop");
            }
            entry.f0_ref = score_f0_ref(entry.score);
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

}  // namespace aria
