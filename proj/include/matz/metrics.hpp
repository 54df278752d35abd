#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "matz/matrix.hpp"

namespace matz {

/// Graded relevance: query id -> (doc id -> grade >= 0).
using Judgments = std::map<std::uint64_t, std::map<std::uint64_t, int>>;

struct NdcgResult {
    double value = 0.0;
    std::vector<std::string> warnings;
};

/// nDCG@k with linear gain: DCG = sum_i rel(doc_i) / log2(i + 1), the ideal
/// ranking ordering judged docs by descending grade. Returns 0 when there
/// is nothing relevant to rank (IDCG = 0) or the ranking is empty.
inline NdcgResult ndcg_at_k(const std::vector<std::uint64_t>& ranking,
                            const std::map<std::uint64_t, int>& grades, std::size_t k) {
    require(k >= 1, "ndcg_at_k: k must be >= 1");
    NdcgResult res;
    if (ranking.empty()) {
        res.warnings.push_back("ndcg_at_k: empty ranking");
        return res;
    }
    double dcg = 0.0;
    const std::size_t depth = std::min(k, ranking.size());
    for (std::size_t i = 0; i < depth; ++i) {
        const auto it = grades.find(ranking[i]);
        if (it == grades.end() || it->second <= 0) continue;
        dcg += static_cast<double>(it->second) / std::log2(static_cast<double>(i) + 2.0);
    }
    std::vector<int> ideal;
    ideal.reserve(grades.size());
    for (const auto& [doc, grade] : grades) {
        if (grade > 0) ideal.push_back(grade);
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<int>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
        idcg += static_cast<double>(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
    }
    if (idcg == 0.0) return res;
    res.value = dcg / idcg;
    return res;
}

/// Macro-averaged recall and F1 over a label confusion. Labels are class
/// ids in [0, classes).
struct ClassificationScores {
    double macro_f1 = 0.0;
    double macro_recall = 0.0;
};

inline ClassificationScores macro_scores(const std::vector<int>& truth,
                                         const std::vector<int>& predicted,
                                         std::size_t classes) {
    require(truth.size() == predicted.size(), "macro_scores: size mismatch");
    require(!truth.empty(), "macro_scores: empty evaluation");
    require(classes >= 2, "macro_scores: need at least 2 classes");
    std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i];
        const int p = predicted[i];
        require(t >= 0 && static_cast<std::size_t>(t) < classes, "macro_scores: bad truth label");
        require(p >= 0 && static_cast<std::size_t>(p) < classes,
                "macro_scores: bad predicted label");
        if (t == p) {
            tp[t] += 1.0;
        } else {
            fn[t] += 1.0;
            fp[p] += 1.0;
        }
    }
    ClassificationScores out;
    for (std::size_t c = 0; c < classes; ++c) {
        const double prec = (tp[c] + fp[c]) > 0.0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double rec = (tp[c] + fn[c]) > 0.0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
        const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        out.macro_recall += rec;
        out.macro_f1 += f1;
    }
    out.macro_recall /= static_cast<double>(classes);
    out.macro_f1 /= static_cast<double>(classes);
    return out;
}

}  // namespace matz
