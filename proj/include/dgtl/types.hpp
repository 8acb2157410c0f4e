#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dgtl/errors.hpp"

namespace dgtl {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixD = Matrix<double>;
using VectorD = Vector<double>;

enum class Modality : std::uint8_t { Visible = 0, Thermal = 1 };

inline char modality_code(Modality m) { return m == Modality::Visible ? 'V' : 'T'; }

inline Modality parse_modality(std::string_view s) {
    if (s == "V" || s == "v" || s == "visible") return Modality::Visible;
    if (s == "T" || s == "t" || s == "thermal") return Modality::Thermal;
    throw DataError("unknown modality '" + std::string(s) + "'");
}

inline Modality other(Modality m) {
    return m == Modality::Visible ? Modality::Thermal : Modality::Visible;
}

/// Spatial extent of an input or feature map, stored row-major as (h, w, c).
struct Shape3 {
    int height = 0;
    int width = 0;
    int channels = 0;

    int pixels() const { return height * width; }
    int size() const { return height * width * channels; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// One image-like input with its identity label and modality tag.
struct LabeledSample {
    std::int64_t sample_id = 0;
    int identity = 0;
    Modality modality = Modality::Visible;
    std::vector<double> data;  // height * width * channels, row-major (h, w, c)
};

/// Feature rows with parallel identity and modality labels.
template <typename Scalar>
struct FeatureBatch {
    Matrix<Scalar> features;
    std::vector<int> identities;
    std::vector<Modality> modalities;

    Eigen::Index rows() const { return features.rows(); }

    void check_shape() const {
        if (static_cast<std::size_t>(features.rows()) != identities.size() ||
            identities.size() != modalities.size())
            throw ShapeError("feature batch rows and label lists differ in length");
    }
};

}  // namespace dgtl
