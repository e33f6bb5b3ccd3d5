#include "cvr/descriptions.hpp"

#include <algorithm>
#include <cmath>

namespace cvr {

const char* description_status_name(DescriptionStatus s) {
    switch (s) {
        case DescriptionStatus::Kept: return "kept";
        case DescriptionStatus::DiscardedHallucination: return "discarded-hallucination";
        case DescriptionStatus::DiscardedEmpty: return "discarded-empty";
    }
    return "unknown";
}

std::string clean_description(std::string_view raw, const CleanConfig& cfg) {
    std::string s;
    s.reserve(raw.size());
    for (unsigned char c : raw) {
        if (c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            s.push_back(' ');
        } else if (c < 0x20 || c == 0x7f) {
            // other control characters vanish without leaving a gap
        } else {
            s.push_back(static_cast<char>(c));
        }
    }
    for (const auto& bad : cfg.denylist) {
        if (bad.empty()) continue;
        std::size_t pos = 0;
        while ((pos = s.find(bad, pos)) != std::string::npos) s.erase(pos, bad.size());
    }
    // collapse whitespace runs and trim
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (c == ' ') {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }
    if (out.empty())
        throw Error(ErrorKind::EmptyAfterCleaning, "clean_description: nothing left");
    return out;
}

double calibrate_threshold(const std::vector<CalibrationPair>& calibration,
                           const EncoderParams& params, const VisualProvider& provider,
                           double percentile) {
    if (calibration.empty())
        throw Error(ErrorKind::EmptyCalibration, "calibrate_threshold: no calibration pairs");
    if (!(percentile >= 0.0 && percentile <= 100.0))
        throw Error(ErrorKind::BadInput, "calibrate_threshold: percentile outside [0, 100]");

    std::vector<double> sims;
    sims.reserve(calibration.size());
    for (const auto& pair : calibration) {
        const Embedding caption =
            encode_text(params, tokenize(pair.caption, params.cfg.vocab_size)).pooled;
        sims.push_back(cosine_sim(caption, visual_embedding(provider, pair.id)));
    }
    std::sort(sims.begin(), sims.end());
    // nearest-rank percentile
    const auto n = static_cast<double>(sims.size());
    std::size_t rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
    if (rank < 1) rank = 1;
    if (rank > sims.size()) rank = sims.size();
    return sims[rank - 1];
}

std::vector<DescriptionRecord> filter_descriptions(const std::vector<RawDescription>& records,
                                                   double threshold,
                                                   const EncoderParams& params,
                                                   const VisualProvider& provider,
                                                   const CleanConfig& clean_cfg) {
    if (!std::isfinite(threshold))
        throw Error(ErrorKind::NonFiniteInput, "filter_descriptions: non-finite threshold");
    std::vector<DescriptionRecord> out;
    out.reserve(records.size());
    for (const auto& raw : records) {
        DescriptionRecord rec;
        rec.id = raw.id;
        rec.raw_text = raw.text;
        try {
            rec.cleaned_text = clean_description(raw.text, clean_cfg);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::EmptyAfterCleaning) throw;
            rec.status = DescriptionStatus::DiscardedEmpty;
            out.push_back(std::move(rec));
            continue;
        }
        const Embedding desc =
            encode_text(params, tokenize(rec.cleaned_text, params.cfg.vocab_size)).pooled;
        rec.similarity = cosine_sim(desc, visual_embedding(provider, rec.id));
        rec.has_similarity = true;
        rec.status = rec.similarity >= threshold ? DescriptionStatus::Kept
                                                 : DescriptionStatus::DiscardedHallucination;
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace cvr
