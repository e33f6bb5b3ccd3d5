#include "cvr/target_db.hpp"

namespace cvr {

Embedding visual_embedding(const VisualProvider& provider, std::uint64_t id) {
    const Mat& seq = provider.lookup(id);
    Embedding mean(seq.cols, 0.0);
    for (std::size_t i = 0; i < seq.rows; ++i)
        for (std::size_t j = 0; j < seq.cols; ++j) mean[j] += seq.at(i, j);
    for (double& x : mean) x /= static_cast<double>(seq.rows);
    return l2_normalize(mean);
}

TargetDatabases build_target_databases(const VisualProvider& provider,
                                       const std::map<std::uint64_t, std::string>& descriptions,
                                       const EncoderParams& params_snapshot) {
    TargetDatabases dbs;
    for (const auto& [id, seq] : provider.sequences) {
        auto dit = descriptions.find(id);
        if (dit == descriptions.end())
            throw Error(ErrorKind::MissingDescription,
                        "target databases: no description for id " + std::to_string(id));
        const TokenSequence tokens = tokenize(dit->second, params_snapshot.cfg.vocab_size);
        dbs.visual[id] = visual_embedding(provider, id);
        dbs.multimodal[id] = ground(params_snapshot, seq, tokens);
        dbs.text[id] = encode_text(params_snapshot, tokens).pooled;
    }
    return dbs;
}

Mat gather_targets(const std::map<std::uint64_t, Embedding>& table,
                   const std::vector<std::uint64_t>& target_ids) {
    if (target_ids.empty())
        throw Error(ErrorKind::ShapeError, "gather_targets: empty id list");
    auto first = table.find(target_ids[0]);
    if (first == table.end())
        throw Error(ErrorKind::MissingEmbedding,
                    "gather_targets: unknown id " + std::to_string(target_ids[0]));
    Mat out(target_ids.size(), first->second.size());
    for (std::size_t i = 0; i < target_ids.size(); ++i) {
        auto it = table.find(target_ids[i]);
        if (it == table.end())
            throw Error(ErrorKind::MissingEmbedding,
                        "gather_targets: unknown id " + std::to_string(target_ids[i]));
        for (std::size_t j = 0; j < it->second.size(); ++j) out.at(i, j) = it->second[j];
    }
    return out;
}

std::array<SimilarityMatrix, 3> batch_similarities(const Mat& joint, const TargetDatabases& dbs,
                                                   const std::vector<std::uint64_t>& target_ids) {
    if (joint.rows != target_ids.size())
        throw Error(ErrorKind::ShapeError, "batch_similarities: batch size mismatch");
    std::array<SimilarityMatrix, 3> out;
    const std::map<std::uint64_t, Embedding>* tables[3] = {&dbs.visual, &dbs.multimodal,
                                                           &dbs.text};
    for (int t = 0; t < 3; ++t) {
        Mat s(joint.rows, target_ids.size());
        for (std::size_t i = 0; i < joint.rows; ++i) {
            const Embedding row = joint.row_copy(i);
            for (std::size_t j = 0; j < target_ids.size(); ++j) {
                auto it = tables[t]->find(target_ids[j]);
                if (it == tables[t]->end())
                    throw Error(ErrorKind::MissingEmbedding,
                                "batch_similarities: unknown id " +
                                    std::to_string(target_ids[j]));
                s.at(i, j) = cosine_sim(row, it->second);
            }
        }
        out[t] = std::move(s);
    }
    return out;
}

} // namespace cvr
