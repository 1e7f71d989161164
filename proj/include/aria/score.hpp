#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "aria/error.hpp"
#include "aria/wav.hpp"

namespace aria {

/// Phoneme-aligned music score: one entry per phoneme.
///
/// note_pitch is the MIDI pitch of the note the phoneme belongs to (0 = rest);
/// note_dur is that note's duration in frames, repeated for each of its
/// phonemes. phn_dur carries labeled phoneme durations (training corpora only).
struct MusicScore {
    std::vector<int> phonemes;
    std::vector<int> note_pitch;
    std::vector<int> note_dur;
    std::vector<int> phn_dur;  // empty when unlabeled

    int size() const { return static_cast<int>(phonemes.size()); }
    bool has_durations() const { return !phn_dur.empty(); }

    int total_frames() const {
        return std::accumulate(phn_dur.begin(), phn_dur.end(), 0);
    }
};

/// Check MusicScore invariants against a phoneme inventory of size P.
/// P <= 0 skips the inventory bound check.
inline void validate_score(const MusicScore& s, int inventory_size = -1) {
    const std::size_t n = s.phonemes.size();
    if (n == 0) throw ValidationError("score: empty phoneme sequence");
    if (s.note_pitch.size() != n || s.note_dur.size() != n)
        throw ValidationError("score: sequence length mismatch (phonemes " + std::to_string(n) +
                              ", note_pitch " + std::to_string(s.note_pitch.size()) + ", note_dur " +
                              std::to_string(s.note_dur.size()) + ")");
    if (!s.phn_dur.empty() && s.phn_dur.size() != n)
        throw ValidationError("score: phn_dur length " + std::to_string(s.phn_dur.size()) +
                              " != phoneme count " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (s.note_pitch[i] < 0 || s.note_pitch[i] > 127)
            throw ValidationError("score: note_pitch[" + std::to_string(i) + "] out of MIDI range");
        if (s.note_dur[i] < 1)
            throw ValidationError("score: note_dur[" + std::to_string(i) + "] < 1");
        if (!s.phn_dur.empty() && s.phn_dur[i] < 1)
            throw ValidationError("score: phn_dur[" + std::to_string(i) + "] < 1");
        if (s.phonemes[i] < 0 || (inventory_size > 0 && s.phonemes[i] >= inventory_size))
            throw ValidationError("score: phoneme id " + std::to_string(s.phonemes[i]) +
                                  " outside inventory of size " + std::to_string(inventory_size));
    }
}

/// One corpus item: score plus audio, with the score-derived F0 reference.
struct CorpusEntry {
    MusicScore score;
    AudioClip audio;
    std::vector<double> f0_ref;  // per frame, Hz, 0 = unvoiced; empty if unlabeled
};

/// A note before per-phoneme expansion: (MIDI pitch, frames, phoneme count).
struct RawNote {
    int pitch = 0;
    int dur = 0;
    int phoneme_count = 0;
};

/// Repeat each note's pitch and duration once per phoneme of that note.
inline void expand_note_sequences(const std::vector<RawNote>& raw, std::vector<int>& note_pitch,
                                  std::vector<int>& note_dur) {
    note_pitch.clear();
    note_dur.clear();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i].phoneme_count < 1)
            throw ValidationError("note " + std::to_string(i) + ": phoneme count must be >= 1");
        for (int k = 0; k < raw[i].phoneme_count; ++k) {
            note_pitch.push_back(raw[i].pitch);
            note_dur.push_back(raw[i].dur);
        }
    }
}

/// MIDI pitch number to Hz. Pitch 0 encodes a rest and is rejected.
inline double midi_to_hz(int pitch) {
    if (pitch < 1 || pitch > 127)
        throw ValidationError("midi_to_hz: pitch " + std::to_string(pitch) + " outside [1, 127]");
    return 440.0 * std::pow(2.0, (pitch - 69) / 12.0);
}

/// Per-frame F0 reference derived from a labeled score (0 Hz during rests).
inline std::vector<double> score_f0_ref(const MusicScore& s) {
    std::vector<double> f0;
    f0.reserve(static_cast<std::size_t>(s.total_frames()));
    for (int i = 0; i < s.size(); ++i) {
        const double hz = s.note_pitch[i] > 0 ? midi_to_hz(s.note_pitch[i]) : 0.0;
        for (int k = 0; k < s.phn_dur[i]; ++k) f0.push_back(hz);
    }
    return f0;
}

/// Split a labeled entry into segments of at most about target_seconds,
/// cutting only at phoneme boundaries. Concatenating the segments restores the
/// original score and audio exactly.
inline std::vector<CorpusEntry> split_segments(const CorpusEntry& entry, double target_seconds, int hop_size) {
    if (target_seconds <= 0) throw ValidationError("split_segments: target_seconds must be > 0");
    if (!entry.score.has_durations()) throw ValidationError("split_segments: entry has no phoneme durations");
    const int target_frames =
        std::max(1, static_cast<int>(std::floor(target_seconds * entry.audio.sample_rate / hop_size)));

    std::vector<CorpusEntry> out;
    const MusicScore& s = entry.score;
    int begin = 0;       // first phoneme of the current segment
    int begin_frame = 0; // its first frame
    int acc = 0;         // frames accumulated in the current segment
    for (int i = 0; i < s.size(); ++i) {
        if (acc > 0 && acc + s.phn_dur[i] > target_frames) {
            out.push_back({});
            CorpusEntry& seg = out.back();
            seg.score.phonemes.assign(s.phonemes.begin() + begin, s.phonemes.begin() + i);
            seg.score.note_pitch.assign(s.note_pitch.begin() + begin, s.note_pitch.begin() + i);
            seg.score.note_dur.assign(s.note_dur.begin() + begin, s.note_dur.begin() + i);
            seg.score.phn_dur.assign(s.phn_dur.begin() + begin, s.phn_dur.begin() + i);
            const int s0 = begin_frame * hop_size;
            const int s1 = std::min((begin_frame + acc) * hop_size, entry.audio.length());
            seg.audio.sample_rate = entry.audio.sample_rate;
            seg.audio.samples.assign(entry.audio.samples.begin() + s0, entry.audio.samples.begin() + s1);
            if (!entry.f0_ref.empty())
                seg.f0_ref.assign(entry.f0_ref.begin() + begin_frame, entry.f0_ref.begin() + begin_frame + acc);
            begin = i;
            begin_frame += acc;
            acc = 0;
        }
        acc += s.phn_dur[i];
    }
    // final segment takes everything left, including any audio tail
    out.push_back({});
    CorpusEntry& seg = out.back();
    seg.score.phonemes.assign(s.phonemes.begin() + begin, s.phonemes.end());
    seg.score.note_pitch.assign(s.note_pitch.begin() + begin, s.note_pitch.end());
    seg.score.note_dur.assign(s.note_dur.begin() + begin, s.note_dur.end());
    seg.score.phn_dur.assign(s.phn_dur.begin() + begin, s.phn_dur.end());
    seg.audio.sample_rate = entry.audio.sample_rate;
    seg.audio.samples.assign(entry.audio.samples.begin() + begin_frame * hop_size, entry.audio.samples.end());
    if (!entry.f0_ref.empty())
        seg.f0_ref.assign(entry.f0_ref.begin() + begin_frame, entry.f0_ref.end());
    return out;
}

}  // namespace aria
