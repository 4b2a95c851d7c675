#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>

namespace mvp {

// Recursive ridge regression: the model after k updates equals the batch
// solve of (X'X + ridge I) theta = X'y on the same k points. Maintained as a
// rank-1 Cholesky update of the Gram matrix, O(d^2) per round; the explicit
// inverse recursion loses digits once the Gram is nearly singular around
// t ~ d at small ridge.
class online_least_squares {
public:
    explicit online_least_squares(int dim, double ridge = 1e-6)
        : dim_(dim), ridge_(ridge), xty_(Eigen::VectorXd::Zero(dim)),
          theta_(Eigen::VectorXd::Zero(dim)) {
        if (dim < 1) throw std::invalid_argument("online_least_squares: dim must be >= 1");
        if (!(ridge > 0.0))
            throw std::invalid_argument("online_least_squares: ridge must be > 0");
        llt_.compute(Eigen::MatrixXd::Identity(dim, dim) * ridge);
    }

    int dimension() const { return dim_; }
    double ridge() const { return ridge_; }
    std::int64_t observations() const { return count_; }

    void update(const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
        check_dim(x);
        llt_.rankUpdate(x, 1.0);
        xty_ += y * x;
        theta_ = llt_.solve(xty_);
        ++count_;
    }

    double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        check_dim(x);
        return theta_.dot(x);
    }

    const Eigen::VectorXd& coefficients() const { return theta_; }

    Eigen::MatrixXd gram_inverse() const {
        return llt_.solve(Eigen::MatrixXd::Identity(dim_, dim_));
    }

private:
    void check_dim(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        if (x.size() != dim_)
            throw std::invalid_argument("online_least_squares: dimension mismatch");
    }

    int dim_;
    double ridge_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd xty_;
    Eigen::VectorXd theta_;
    std::int64_t count_ = 0;
};

}  // namespace mvp
