#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdm/linalg.hpp"
#include "sdm/rng.hpp"

using namespace sdm;

namespace {

DenseMatrix random_symmetric(int n, Rng& rng) {
    DenseMatrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) a(i, j) = a(j, i) = rng.uniform(-2.0, 2.0);
    return a;
}

}  // namespace

TEST_CASE("jacobi solves the 2x2 case analytically") {
    // [[2, 1], [1, 2]] has eigenvalues 1 and 3
    DenseMatrix a(2, 2);
    a(0, 0) = 2; a(0, 1) = 1; a(1, 0) = 1; a(1, 1) = 2;
    const SymmetricEigen e = jacobi_eigen(a);
    REQUIRE_THAT(e.values[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(e.values[1], Catch::Matchers::WithinAbs(3.0, 1e-12));
    // eigenvector for lambda=1 is (1,-1)/sqrt(2) up to sign
    REQUIRE_THAT(std::abs(e.vectors(0, 0)), Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-12));
    REQUIRE_THAT(e.vectors(0, 0) + e.vectors(1, 0), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("diagonal input returns sorted diagonal") {
    DenseMatrix a(3, 3);
    a(0, 0) = 5.0; a(1, 1) = -1.0; a(2, 2) = 2.0;
    const SymmetricEigen e = jacobi_eigen(a);
    REQUIRE_THAT(e.values[0], Catch::Matchers::WithinAbs(-1.0, 1e-14));
    REQUIRE_THAT(e.values[1], Catch::Matchers::WithinAbs(2.0, 1e-14));
    REQUIRE_THAT(e.values[2], Catch::Matchers::WithinAbs(5.0, 1e-14));
}

TEST_CASE("random symmetric matrices: reconstruction and orthonormality") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(derive_seed(321, "jacobi", seed));
        const int n = 2 + static_cast<int>(rng.uniform_int(0, 18));
        const DenseMatrix a = random_symmetric(n, rng);
        const SymmetricEigen e = jacobi_eigen(a);

        // ascending order
        for (std::size_t i = 1; i < e.values.size(); ++i) REQUIRE(e.values[i] >= e.values[i - 1]);

        // A v_j = lambda_j v_j
        DenseMatrix lambda(n, n);
        for (int j = 0; j < n; ++j) lambda(j, j) = e.values[static_cast<std::size_t>(j)];
        const DenseMatrix av = matmul(a, e.vectors);
        const DenseMatrix vl = matmul(e.vectors, lambda);
        REQUIRE(max_abs_diff(av, vl) < 1e-10);

        // V^T V = I
        const DenseMatrix vtv = matmul(transpose(e.vectors), e.vectors);
        REQUIRE(max_abs_diff(vtv, DenseMatrix::identity(n)) < 1e-12);
    }
}

TEST_CASE("jacobi rejects non-square input") {
    REQUIRE_THROWS_AS(jacobi_eigen(DenseMatrix(2, 3)), ContractError);
}

TEST_CASE("dense matmul matches a hand example and transpose is involutive") {
    DenseMatrix a(2, 3), b(3, 2);
    // a = [[1,2,3],[4,5,6]], b = [[7,8],[9,10],[11,12]]
    for (int i = 0; i < 6; ++i) a.data[static_cast<std::size_t>(i)] = i + 1;
    for (int i = 0; i < 6; ++i) b.data[static_cast<std::size_t>(i)] = i + 7;
    const DenseMatrix c = matmul(a, b);
    REQUIRE(c(0, 0) == 58.0);
    REQUIRE(c(0, 1) == 64.0);
    REQUIRE(c(1, 0) == 139.0);
    REQUIRE(c(1, 1) == 154.0);
    REQUIRE(max_abs_diff(transpose(transpose(a)), a) == 0.0);
    REQUIRE_THROWS_AS(matmul(a, a), ContractError);
}
