#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "dgtl/embedder.hpp"
#include "dgtl/errors.hpp"
#include "dgtl/losses.hpp"

namespace dgtl {

/// How the two triplet kinds are placed on the fine and coarse branches.
/// The fine_only_* arrangements drop the coarse branch losses entirely.
enum class Arrangement { FineOnly_f, FineOnly_c, FineOnly_fc, f2f, c2c, c2f, f2c };

inline constexpr std::array<Arrangement, 7> kAllArrangements = {
    Arrangement::FineOnly_f, Arrangement::FineOnly_c, Arrangement::FineOnly_fc, Arrangement::f2f,
    Arrangement::c2c,        Arrangement::c2f,        Arrangement::f2c};

inline std::string to_string(Arrangement a) {
    switch (a) {
        case Arrangement::FineOnly_f: return "fine_f";
        case Arrangement::FineOnly_c: return "fine_c";
        case Arrangement::FineOnly_fc: return "fine_fc";
        case Arrangement::f2f: return "f2f";
        case Arrangement::c2c: return "c2c";
        case Arrangement::c2f: return "c2f";
        case Arrangement::f2c: return "f2c";
    }
    return "?";
}

inline Arrangement parse_arrangement(std::string_view s) {
    for (auto a : kAllArrangements)
        if (s == to_string(a)) return a;
    if (s == "FineOnly_f") return Arrangement::FineOnly_f;
    if (s == "FineOnly_c") return Arrangement::FineOnly_c;
    if (s == "FineOnly_fc") return Arrangement::FineOnly_fc;
    throw ConfigError("unknown arrangement '" + std::string(s) +
                      "' (fine_f, fine_c, fine_fc, f2f, c2c, c2f, f2c)");
}

inline bool is_dual_branch(Arrangement a) {
    return a != Arrangement::FineOnly_f && a != Arrangement::FineOnly_c &&
           a != Arrangement::FineOnly_fc;
}

/// Feature the fine-branch triplet loss reads: pooled (f_p) or post-BNNeck (f_bn).
enum class FineFeature { f_p, f_bn };
/// Feature the coarse-branch triplet loss reads: fused before (f_pf) or after (f_bnf) batch norm.
enum class CoarseFeature { none, f_pf, f_bnf };

inline std::string to_string(FineFeature f) { return f == FineFeature::f_p ? "f_p" : "f_bn"; }
inline std::string to_string(CoarseFeature f) {
    return f == CoarseFeature::none ? "none" : f == CoarseFeature::f_pf ? "f_pf" : "f_bnf";
}

inline FineFeature parse_fine_feature(std::string_view s) {
    if (s == "f_p") return FineFeature::f_p;
    if (s == "f_bn") return FineFeature::f_bn;
    throw ConfigError("unknown fine_feature '" + std::string(s) + "' (f_p, f_bn)");
}

inline CoarseFeature parse_coarse_feature(std::string_view s) {
    if (s == "none") return CoarseFeature::none;
    if (s == "f_pf") return CoarseFeature::f_pf;
    if (s == "f_bnf") return CoarseFeature::f_bnf;
    throw ConfigError("unknown coarse_feature '" + std::string(s) + "' (none, f_pf, f_bnf)");
}

struct LossConfig {
    double margin_fine = 0.3;    // margin of every sample-based triplet term
    double margin_coarse = 0.3;  // margin of every center-based triplet term
    Arrangement arrangement = Arrangement::f2c;
    FineFeature fine_feature = FineFeature::f_p;
    CoarseFeature coarse_feature = CoarseFeature::f_bnf;

    void validate() const {
        for (double m : {margin_fine, margin_coarse})
            if (!(m >= 0) || !std::isfinite(m)) throw ConfigError("margins must be finite and >= 0");
        if (is_dual_branch(arrangement) && coarse_feature == CoarseFeature::none)
            throw ConfigError("arrangement " + to_string(arrangement) +
                              " needs a coarse_feature (f_pf or f_bnf)");
    }
};

struct LossReport {
    double l_f_tri = 0;  // all sample-based triplet terms
    double l_c_tri = 0;  // all center-based triplet terms
    double l_id_fine = 0;
    double l_id_coarse = 0;
    double l_all = 0;
    OutputGradients grad;
    /// Mining decisions of every triplet term, in evaluation order.
    std::vector<int> selection;

    bool finite() const {
        return std::isfinite(l_f_tri) && std::isfinite(l_c_tri) && std::isfinite(l_id_fine) &&
               std::isfinite(l_id_coarse) && std::isfinite(l_all);
    }
};

/// Total objective: triplet terms on the fine branch, then (for dual-branch
/// arrangements) on the coarse branch, plus one identification loss per
/// active branch. All terms are weighted 1. `identities` double as class
/// indices of the classifiers.
inline LossReport dgtl_total(const ForwardOutputs& out, const std::vector<int>& identities,
                             const std::vector<Modality>& modalities, const LossConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<Eigen::Index>(identities.size());
    if (modalities.size() != identities.size() || out.f_p_fine.rows() != n || out.f_bn.rows() != n ||
        out.f_fused.rows() != n || out.f_bnf.rows() != n || out.logits_fine.rows() != n ||
        out.logits_coarse.rows() != n)
        throw ShapeError("forward outputs and labels disagree on batch size");

    LossReport r;
    r.grad.f_p_fine = MatrixD::Zero(n, out.f_p_fine.cols());
    r.grad.f_bn = MatrixD::Zero(n, out.f_bn.cols());
    r.grad.f_fused = MatrixD::Zero(n, out.f_fused.cols());
    r.grad.f_bnf = MatrixD::Zero(n, out.f_bnf.cols());

    enum Kind { Sample, Center };
    auto apply = [&](Kind kind, const MatrixD& features, MatrixD& grad) {
        const FeatureBatch<double> batch{features, identities, modalities};
        TripletResult<double> t = kind == Sample ? fine_triplet(batch, cfg.margin_fine)
                                                 : hetero_center_triplet(batch, cfg.margin_coarse);
        (kind == Sample ? r.l_f_tri : r.l_c_tri) += t.loss;
        grad += t.grad;
        r.selection.insert(r.selection.end(), t.selection.begin(), t.selection.end());
    };

    const bool fine_on_pool = cfg.fine_feature == FineFeature::f_p;
    const MatrixD& fine_in = fine_on_pool ? out.f_p_fine : out.f_bn;
    MatrixD& fine_grad = fine_on_pool ? r.grad.f_p_fine : r.grad.f_bn;
    const bool coarse_on_fused = cfg.coarse_feature == CoarseFeature::f_pf;
    const MatrixD& coarse_in = coarse_on_fused ? out.f_fused : out.f_bnf;
    MatrixD& coarse_grad = coarse_on_fused ? r.grad.f_fused : r.grad.f_bnf;

    switch (cfg.arrangement) {
        case Arrangement::FineOnly_f: apply(Sample, fine_in, fine_grad); break;
        case Arrangement::FineOnly_c: apply(Center, fine_in, fine_grad); break;
        case Arrangement::FineOnly_fc:
            apply(Sample, fine_in, fine_grad);
            apply(Center, fine_in, fine_grad);
            break;
        case Arrangement::f2f:
            apply(Sample, fine_in, fine_grad);
            apply(Sample, coarse_in, coarse_grad);
            break;
        case Arrangement::c2c:
            apply(Center, fine_in, fine_grad);
            apply(Center, coarse_in, coarse_grad);
            break;
        case Arrangement::c2f:
            apply(Center, fine_in, fine_grad);
            apply(Sample, coarse_in, coarse_grad);
            break;
        case Arrangement::f2c:
            apply(Sample, fine_in, fine_grad);
            apply(Center, coarse_in, coarse_grad);
            break;
    }

    const IdLossResult<double> id_fine = id_loss(out.logits_fine, identities);
    r.l_id_fine = id_fine.loss;
    r.grad.logits_fine = id_fine.grad;
    if (is_dual_branch(cfg.arrangement)) {
        const IdLossResult<double> id_coarse = id_loss(out.logits_coarse, identities);
        r.l_id_coarse = id_coarse.loss;
        r.grad.logits_coarse = id_coarse.grad;
    } else {
        r.grad.logits_coarse = MatrixD::Zero(n, out.logits_coarse.cols());
    }
    r.l_all = r.l_f_tri + r.l_c_tri + r.l_id_fine + r.l_id_coarse;
    return r;
}

}  // namespace dgtl
