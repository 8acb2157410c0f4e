#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dgtl/errors.hpp"
#include "dgtl/types.hpp"

namespace dgtl {

struct RetrievalResult {
    std::vector<double> cmc;  // cmc[k-1] is the rank-k accuracy, k = 1..gallery size
    double map = 0;
    std::vector<double> per_query_ap;

    /// Rank-k accuracy, clamped to the gallery size.
    double rank(std::size_t k) const { return cmc.empty() ? 0.0 : cmc[std::min(k, cmc.size()) - 1]; }
};

/// Cross-modality retrieval: every query ranks the whole gallery by ascending
/// Euclidean distance (ties keep gallery order). CMC counts the rank of the
/// first correct match; AP averages precision at each correct hit over all
/// correct gallery items. No same-camera filtering is applied.
template <typename Scalar>
RetrievalResult evaluate(const FeatureBatch<Scalar>& query, const FeatureBatch<Scalar>& gallery) {
    query.check_shape();
    gallery.check_shape();
    if (query.rows() == 0 || gallery.rows() == 0) throw ProtocolError("empty query or gallery set");
    if (query.features.cols() != gallery.features.cols())
        throw ShapeError("query and gallery feature dimensions differ");
    const Modality qm = query.modalities.front();
    for (Modality m : query.modalities)
        if (m != qm) throw ProtocolError("query set mixes modalities");
    for (Modality m : gallery.modalities)
        if (m == qm) throw ProtocolError("gallery must come from the other modality");
    const std::set<int> gallery_ids(gallery.identities.begin(), gallery.identities.end());
    for (int id : query.identities)
        if (!gallery_ids.count(id))
            throw ProtocolError("query identity " + std::to_string(id) + " is absent from the gallery");

    const Eigen::Index nq = query.rows();
    const Eigen::Index ng = gallery.rows();
    RetrievalResult res;
    std::vector<double> first_hit_counts(ng, 0.0);
    res.per_query_ap.reserve(nq);
    std::vector<Scalar> dist(ng);
    std::vector<Eigen::Index> order(ng);
    for (Eigen::Index q = 0; q < nq; ++q) {
        for (Eigen::Index g = 0; g < ng; ++g)
            dist[g] = (query.features.row(q) - gallery.features.row(g)).norm();
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return dist[a] < dist[b]; });
        int hits = 0;
        double precision_sum = 0;
        for (Eigen::Index rank = 0; rank < ng; ++rank) {
            if (gallery.identities[order[rank]] != query.identities[q]) continue;
            if (hits == 0) first_hit_counts[rank] += 1;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
        res.per_query_ap.push_back(precision_sum / hits);
    }
    res.cmc.resize(ng);
    double running = 0;
    for (Eigen::Index k = 0; k < ng; ++k) {
        running += first_hit_counts[k];
        res.cmc[k] = running / static_cast<double>(nq);
    }
    res.map = std::accumulate(res.per_query_ap.begin(), res.per_query_ap.end(), 0.0) /
              static_cast<double>(nq);
    return res;
}

/// Reads `identity,modality,f0,...,f{D-1}` with a header row.
inline FeatureBatch<double> read_feature_csv(std::istream& in) {
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        for (auto& c : cells) {
            const auto b = c.find_first_not_of(" \t\r");
            const auto e = c.find_last_not_of(" \t\r");
            c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
        }
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty feature file", 1);
    const auto header = split(line);
    if (header.size() < 3 || header[0] != "identity" || header[1] != "modality")
        throw ParseError("expected header 'identity,modality,f0,...'", 1);
    const std::size_t dim = header.size() - 2;
    for (std::size_t d = 0; d < dim; ++d)
        if (header[d + 2] != "f" + std::to_string(d))
            throw ParseError("expected column name f" + std::to_string(d), 1, static_cast<long>(d + 3));

    FeatureBatch<double> batch;
    std::vector<double> values;
    long row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split(line);
        if (cells.size() != dim + 2)
            throw ParseError("expected " + std::to_string(dim + 2) + " fields, got " +
                             std::to_string(cells.size()), row);
        try {
            std::size_t used = 0;
            const int id = std::stoi(cells[0], &used);
            if (used != cells[0].size()) throw std::invalid_argument("");
            batch.identities.push_back(id);
        } catch (const std::exception&) {
            throw ParseError("bad identity '" + cells[0] + "'", row, 1);
        }
        if (cells[1] == "V") batch.modalities.push_back(Modality::Visible);
        else if (cells[1] == "T") batch.modalities.push_back(Modality::Thermal);
        else throw ParseError("modality must be V or T, got '" + cells[1] + "'", row, 2);
        for (std::size_t d = 0; d < dim; ++d) {
            const std::string& c = cells[d + 2];
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            if (c.empty() || end != c.c_str() + c.size() || !std::isfinite(v))
                throw ParseError("bad feature value '" + c + "'", row, static_cast<long>(d + 3));
            values.push_back(v);
        }
    }
    batch.features = Eigen::Map<const MatrixD>(values.data(), static_cast<Eigen::Index>(batch.identities.size()),
                                               static_cast<Eigen::Index>(dim));
    return batch;
}

inline FeatureBatch<double> read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open feature file " + path);
    return read_feature_csv(in);
}

inline void write_feature_csv(std::ostream& out, const FeatureBatch<double>& batch) {
    out << "identity,modality";
    for (Eigen::Index d = 0; d < batch.features.cols(); ++d) out << ",f" << d;
    out << '\n';
    char buf[40];
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        out << batch.identities[r] << ',' << modality_code(batch.modalities[r]);
        for (Eigen::Index d = 0; d < batch.features.cols(); ++d) {
            std::snprintf(buf, sizeof buf, "%.17g", batch.features(r, d));
            out << ',' << buf;
        }
        out << '\n';
    }
}

}  // namespace dgtl
