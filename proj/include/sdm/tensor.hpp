#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <tuple>
#include <vector>

#include "sdm/errors.hpp"
#include "sdm/linalg.hpp"

namespace sdm {

inline std::string shape_to_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

/// Dense row-major 64-bit real tensor. Rank is the shape length; a scalar is
/// shape [1].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ContractError("tensor: non-positive dimension in " + shape_to_string(s));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        Tensor t({r, c});
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) throw ContractError("tensor: ragged initializer");
            for (double v : row) t.data[i++] = v;
        }
        return t;
    }

    static Tensor from_vector(const std::vector<double>& v) {
        Tensor t({static_cast<int>(v.size())});
        t.data = v;
        return t;
    }

    static Tensor from_dense(const DenseMatrix& m) {
        Tensor t({m.rows, m.cols});
        t.data = m.data;
        return t;
    }

    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(j)]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(j)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        // Tape ops run this over every result; the exponent-bits test (all
        // ones = Inf or NaN) vectorizes where std::isfinite per element
        // would not.
        constexpr std::uint64_t kExpMask = 0x7ff0000000000000ull;
        std::uint64_t bad = 0;
        for (double v : data)
            bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExpMask) == kExpMask);
        return bad == 0;
    }
};

/// Immutable CSR sparse matrix for incidence-style operators. Entries are
/// kept in row-major order; construction from triplets sorts and validates.
struct SparseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<int> row_ptr;  // length rows+1
    std::vector<int> col_idx;
    std::vector<double> values;

    static SparseMatrix from_triplets(int rows, int cols,
                                      std::vector<std::tuple<int, int, double>> triplets) {
        SparseMatrix s;
        s.rows = rows;
        s.cols = cols;
        std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
            if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
            return std::get<1>(a) < std::get<1>(b);
        });
        s.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
        for (std::size_t i = 0; i < triplets.size(); ++i) {
            const auto& [r, c, v] = triplets[i];
            if (r < 0 || r >= rows || c < 0 || c >= cols)
                throw ContractError("sparse: triplet out of bounds");
            // coalesce duplicates (sorted, so they are adjacent)
            if (i > 0 && std::get<0>(triplets[i - 1]) == r && std::get<1>(triplets[i - 1]) == c) {
                s.values.back() += v;
                continue;
            }
            ++s.row_ptr[static_cast<std::size_t>(r) + 1];
            s.col_idx.push_back(c);
            s.values.push_back(v);
        }
        for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r)
            s.row_ptr[r + 1] += s.row_ptr[r];
        return s;
    }

    SparseMatrix transposed() const {
        std::vector<std::tuple<int, int, double>> t;
        t.reserve(values.size());
        for (int r = 0; r < rows; ++r)
            for (int k = row_ptr[static_cast<std::size_t>(r)]; k < row_ptr[static_cast<std::size_t>(r) + 1]; ++k)
                t.emplace_back(col_idx[static_cast<std::size_t>(k)], r, values[static_cast<std::size_t>(k)]);
        return from_triplets(cols, rows, std::move(t));
    }

    DenseMatrix to_dense() const {
        DenseMatrix d(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int k = row_ptr[static_cast<std::size_t>(r)]; k < row_ptr[static_cast<std::size_t>(r) + 1]; ++k)
                d(r, col_idx[static_cast<std::size_t>(k)]) = values[static_cast<std::size_t>(k)];
        return d;
    }

    // y = S x for a dense right-hand side with `inner_cols` columns.
    void multiply_into(const double* x, int inner_cols, double* y) const {
        std::fill(y, y + static_cast<std::size_t>(rows) * static_cast<std::size_t>(inner_cols), 0.0);
        multiply_add_into(x, inner_cols, y);
    }

    // y += S x, for accumulation into live buffers (gradients).
    void multiply_add_into(const double* x, int inner_cols, double* y) const {
        for (int r = 0; r < rows; ++r) {
            double* yr = y + static_cast<std::size_t>(r) * static_cast<std::size_t>(inner_cols);
            for (int k = row_ptr[static_cast<std::size_t>(r)]; k < row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
                const double s = values[static_cast<std::size_t>(k)];
                const double* xr = x + static_cast<std::size_t>(col_idx[static_cast<std::size_t>(k)]) * static_cast<std::size_t>(inner_cols);
                for (int j = 0; j < inner_cols; ++j) yr[j] += s * xr[j];
            }
        }
    }
};

}  // namespace sdm
