#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dgtl/config_kv.hpp"
#include "dgtl/embedder.hpp"
#include "dgtl/errors.hpp"
#include "dgtl/kv.hpp"

namespace dgtl {

inline constexpr int kCheckpointFormatVersion = 1;

/// Text checkpoint container:
///
///   dgtl-checkpoint
///   format_version 1
///   meta <key> <value>                     (any number, value runs to end of line)
///   tensor <name> <rows> <cols> <values>   (row-major, C99 hex floats)
///   end
///
/// Hex floats make every value round-trip bit for bit.
struct Archive {
    KeyValueList meta;
    std::vector<std::pair<std::string, MatrixD>> tensors;

    const std::string& meta_value(const std::string& key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        throw DataError("checkpoint lacks meta key '" + key + "'");
    }

    const MatrixD& tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw DataError("checkpoint lacks tensor '" + name + "'");
    }

    void write(std::ostream& out) const {
        out << "dgtl-checkpoint\nformat_version " << kCheckpointFormatVersion << '\n';
        for (const auto& [k, v] : meta) {
            if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
                throw DataError("meta entry '" + k + "' cannot be stored on one line");
            out << "meta " << k << ' ' << v << '\n';
        }
        char buf[40];
        for (const auto& [name, t] : tensors) {
            out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols();
            for (Eigen::Index i = 0; i < t.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%a", t.data()[i]);
                out << ' ' << buf;
            }
            out << '\n';
        }
        out << "end\n";
    }

    static Archive read(std::istream& in) {
        Archive a;
        std::string line;
        long row = 0;
        auto next = [&]() {
            ++row;
            return static_cast<bool>(std::getline(in, line));
        };
        if (!next() || line != "dgtl-checkpoint") throw ParseError("not a dgtl checkpoint", 1);
        if (!next() || line != "format_version " + std::to_string(kCheckpointFormatVersion))
            throw ParseError("unsupported checkpoint format version", 2);
        bool ended = false;
        while (next()) {
            if (line == "end") {
                ended = true;
                break;
            }
            std::istringstream ss(line);
            std::string kind;
            ss >> kind;
            if (kind == "meta") {
                std::string key;
                ss >> key;
                std::string value;
                std::getline(ss, value);
                if (!value.empty() && value.front() == ' ') value.erase(0, 1);
                a.meta.emplace_back(key, value);
            } else if (kind == "tensor") {
                std::string name;
                Eigen::Index rows = -1, cols = -1;
                ss >> name >> rows >> cols;
                if (!ss || rows < 0 || cols < 0) throw ParseError("bad tensor header", row);
                MatrixD t(rows, cols);
                std::string tok;
                for (Eigen::Index i = 0; i < t.size(); ++i) {
                    if (!(ss >> tok)) throw ParseError("tensor " + name + " is truncated", row);
                    char* end = nullptr;
                    t.data()[i] = std::strtod(tok.c_str(), &end);
                    if (*end != '\0') throw ParseError("bad value '" + tok + "' in tensor " + name, row);
                }
                if (ss >> tok) throw ParseError("tensor " + name + " has extra values", row);
                a.tensors.emplace_back(name, std::move(t));
            } else {
                throw ParseError("unexpected line kind '" + kind + "'", row);
            }
        }
        if (!ended) throw ParseError("checkpoint is missing its 'end' line", row);
        return a;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IOError("cannot write checkpoint " + path);
        write(out);
        if (!out) throw IOError("write failed for checkpoint " + path);
    }

    static Archive load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IOError("cannot open checkpoint " + path);
        return read(in);
    }
};

/// Appends every parameter array under `prefix` + name.
inline void add_parameters(Archive& a, const Parameters& p, const std::string& prefix = "") {
    p.for_each([&](const std::string& name, const auto& t, TensorRole) {
        a.tensors.emplace_back(prefix + name, Eigen::Map<const MatrixD>(t.data(), t.rows(), t.cols()));
    });
}

/// Overwrites `p` (already shaped) from the archive; shapes must match.
inline void read_parameters(const Archive& a, Parameters& p, const std::string& prefix = "") {
    p.for_each([&](const std::string& name, auto& t, TensorRole) {
        const MatrixD& src = a.tensor(prefix + name);
        if (src.rows() != t.rows() || src.cols() != t.cols())
            throw ShapeError("checkpoint tensor " + prefix + name + " has the wrong shape");
        std::copy(src.data(), src.data() + src.size(), t.data());
    });
}

inline EmbedderConfig embedder_config_from(const Archive& a) {
    KeyValues kv;
    for (const auto& [k, v] : a.meta)
        if (k.rfind("embedder.", 0) == 0) kv.set(k.substr(9), v);
    EmbedderConfig cfg;
    apply_kv(kv, cfg);
    kv.require_all_used();
    return cfg;
}

inline void add_embedder_config(Archive& a, const EmbedderConfig& cfg) {
    KeyValueList list;
    append_kv(list, cfg);
    for (auto& [k, v] : list) a.meta.emplace_back("embedder." + k, v);
}

inline void save_model(const std::string& path, const Embedder& model) {
    Archive a;
    a.meta.emplace_back("kind", "model");
    add_embedder_config(a, model.config());
    add_parameters(a, model.parameters());
    a.save(path);
}

inline Embedder load_model(const Archive& a) {
    EmbedderConfig cfg = embedder_config_from(a);
    Parameters p = init_parameters(cfg);
    read_parameters(a, p);
    return Embedder(std::move(cfg), std::move(p));
}

inline Embedder load_model(const std::string& path) { return load_model(Archive::load(path)); }

}  // namespace dgtl
