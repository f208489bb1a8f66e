#include "chorus/mat.hpp"

#include <Eigen/Core>

#include <cmath>

namespace chorus {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

void gemm(const Mat & A, const Mat & B, Mat & C, bool trans_b, bool accumulate) {
    const int n = trans_b ? B.rows : B.cols;
    assert((trans_b ? B.cols : B.rows) == A.cols);
    if (C.rows != A.rows || C.cols != n) {
        C = Mat(A.rows, n);
    }
    CMap a(A.a.data(), A.rows, A.cols);
    CMap b(B.a.data(), B.rows, B.cols);
    MMap c(C.a.data(), C.rows, C.cols);
    if (trans_b) {
        if (accumulate) {
            c.noalias() += a * b.transpose();
        } else {
            c.noalias() = a * b.transpose();
        }
    } else {
        if (accumulate) {
            c.noalias() += a * b;
        } else {
            c.noalias() = a * b;
        }
    }
}

void axpy(double alpha, const Mat & A, Mat & out) {
    assert(A.same_shape(out));
    const size_t n = A.size();
    for (size_t i = 0; i < n; ++i) {
        out.a[i] += alpha * A.a[i];
    }
}

bool all_finite(const Mat & m) {
    for (double v : m.a) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

} // namespace chorus
