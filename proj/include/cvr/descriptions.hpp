#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvr/encoder.hpp"
#include "cvr/target_db.hpp"

namespace cvr {

struct CleanConfig {
    // character sequences erased outright; control characters and repeated
    // whitespace are always handled
    std::vector<std::string> denylist = {"{", "}", "|", "\\", "\xEF\xBF\xBD"};
};

/// Strips control characters, erases the denylist, collapses whitespace and
/// trims. Sentence punctuation survives. Throws EmptyAfterCleaning.
std::string clean_description(std::string_view raw, const CleanConfig& cfg = {});

enum class DescriptionStatus { Kept, DiscardedHallucination, DiscardedEmpty };

const char* description_status_name(DescriptionStatus s);

struct RawDescription {
    std::uint64_t id = 0;
    std::string text;
};

struct DescriptionRecord {
    std::uint64_t id = 0;
    std::string raw_text;
    std::string cleaned_text;
    double similarity = 0.0;
    bool has_similarity = false; // false only for discarded-empty records
    DescriptionStatus status = DescriptionStatus::Kept;
};

struct CalibrationPair {
    std::uint64_t id = 0;
    std::string caption;
};

/// Caption-to-visual cosine for every calibration pair, reduced to the
/// nearest-rank percentile (0 = minimum, the literal lower bound).
/// Throws EmptyCalibration.
double calibrate_threshold(const std::vector<CalibrationPair>& calibration,
                           const EncoderParams& params, const VisualProvider& provider,
                           double percentile = 0.0);

/// Scores each cleaned description against its video and assigns statuses:
/// similarity >= threshold keeps, below discards as hallucination; text that
/// cleans to nothing is discarded-empty. Input order is preserved.
std::vector<DescriptionRecord> filter_descriptions(const std::vector<RawDescription>& records,
                                                   double threshold,
                                                   const EncoderParams& params,
                                                   const VisualProvider& provider,
                                                   const CleanConfig& clean_cfg = {});

} // namespace cvr
