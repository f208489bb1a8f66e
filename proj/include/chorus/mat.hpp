#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace chorus {

// Dense row-major matrix of doubles. Vectors are 1xN.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double & at(int i, int j) {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return a[static_cast<size_t>(i) * cols + j];
    }
    double at(int i, int j) const {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return a[static_cast<size_t>(i) * cols + j];
    }
    double * row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const double * row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return a.size(); }
    bool same_shape(const Mat & o) const { return rows == o.rows && cols == o.cols; }

    static Mat zeros_like(const Mat & m) { return Mat(m.rows, m.cols); }
};

// C (+)= A * B or A * B^T
void gemm(const Mat & A, const Mat & B, Mat & C, bool trans_b, bool accumulate);

// out (+)= alpha * A, elementwise
void axpy(double alpha, const Mat & A, Mat & out);

bool all_finite(const Mat & m);

} // namespace chorus
