#ifndef CI_PHYSICS_HPP_
#define CI_PHYSICS_HPP_

#include <string>
#include <vector>

namespace ci {

// All energies in MeV, all lengths in mm.
struct PhysicalConstants {
    double mc2 = 0.511;    // electron rest energy, MeV
    double r_e = 2.8179;   // classical electron radius, fm
};

inline constexpr double kMc2 = 0.511;

// Compton scattering angle (rad) for initial energy E0 and deposit E1.
// Monotone increasing in E1, mapping [0, max_deposit(E0)] onto [0, pi].
double compton_angle(double E0, double E1);

// Kinematic upper bound on the Compton deposit: E0 - E0/(1 + 2 E0/mc2).
double max_deposit(double E0);

// Inverse of compton_angle in E1: deposit producing scattering angle omega.
double deposit_for_angle(double E0, double omega);

// Klein-Nishina energy-deposit density (per MeV), normalized over
// [0, max_deposit(E0)]; zero outside.
double kn_deposit_density(double E0, double E1);
double kn_log_deposit_density(double E0, double E1);

// Closed-form antiderivative of the unnormalized deposit density; F(b)-F(a)
// equals the integral of the kernel over [a, b] for 0 <= a <= b < E0.
double kn_antiderivative(double E0, double E);

// Draw a deposit from kn_deposit_density by inverting the antiderivative.
double kn_sample_deposit(double E0, double u01);

enum class MuKind { Total, Photo, Compton };

// Energy-indexed linear attenuation coefficients, log-log interpolated.
class AttenuationTable {
public:
    struct Row {
        double energy;      // MeV
        double mu_total;    // 1/mm
        double mu_photo;    // 1/mm
        double mu_compton;  // 1/mm
    };

    explicit AttenuationTable(std::vector<Row> rows);

    // CSV with header energy_mev,mu_total_mm,mu_photo_mm,mu_compton_mm.
    static AttenuationTable load_csv(const std::string& path);
    static AttenuationTable parse_csv(const std::string& text);

    double mu(MuKind kind, double energy) const;
    double min_energy() const { return rows_.front().energy; }
    double max_energy() const { return rows_.back().energy; }
    const std::vector<Row>& rows() const { return rows_; }

private:
    std::vector<Row> rows_;
};

// Probability that the second interaction is an absorption, marginalized
// over the first Compton deposit:  integral of (mu_photo/mu_total)(E0-E1)
// against the deposit density, by trapezoid with n_nodes.
double analytic_p_absorb(const AttenuationTable& table, double E0, int n_nodes = 2000);

}  // namespace ci

#endif  // CI_PHYSICS_HPP_
