#pragma once

// Model configuration for the partially observed stochastic heat equation
// on (0,1) with Dirichlet boundaries, spectral discretization and pointwise
// Gaussian observations. Persisted as flat key=value text.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mismc2 {

struct ModelConfig {
  double drift = 0.5;                  // key "theta": linear drift coefficient
  double sigma = std::sqrt(0.1);       // key "sigma2": noise amplitude (stored squared)
  double tau2 = 1.0;                   // observation noise variance
  double delta = 0.001;                // inter-observation interval
  int n_obs = 100;                     // observation count
  int K0 = 4;                          // base mode count, K = K0 * 2^{level_x}
  int M0 = 2;                          // base step count, M = M0 * 2^{level_t}
  double u0 = 1.0;                     // initial value of every mode coefficient
  std::vector<double> obs_locations{1.0 / 3.0, 2.0 / 3.0};  // keys x1, x2
  std::uint64_t seed = 1;

  int modes_at(int level_x) const { return K0 << level_x; }
  int steps_at(int level_t) const { return M0 << level_t; }

  void validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("config: sigma must be >= 0");
    if (!(tau2 >= 0.0)) throw std::invalid_argument("config: tau2 must be >= 0");
    if (!(delta > 0.0)) throw std::invalid_argument("config: delta must be > 0");
    if (n_obs < 0) throw std::invalid_argument("config: n_obs must be >= 0");
    if (K0 < 1 || M0 < 1) throw std::invalid_argument("config: K0 and M0 must be >= 1");
    if (obs_locations.empty()) throw std::invalid_argument("config: need observation locations");
    for (double x : obs_locations)
      if (!(x > 0.0 && x < 1.0))
        throw std::invalid_argument("config: observation locations must lie in (0,1)");
  }

  static ModelConfig parse_kv(const std::string& text) {
    ModelConfig c;
    double x1 = c.obs_locations[0], x2 = c.obs_locations[1];
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw std::invalid_argument("config: malformed line: " + line);
        continue;
      }
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string val = trim(line.substr(eq + 1));
      try {
        if (key == "theta") c.drift = std::stod(val);
        else if (key == "sigma2") c.sigma = std::sqrt(std::stod(val));
        else if (key == "tau2") c.tau2 = std::stod(val);
        else if (key == "delta") c.delta = std::stod(val);
        else if (key == "n_obs") c.n_obs = std::stoi(val);
        else if (key == "K0") c.K0 = std::stoi(val);
        else if (key == "M0") c.M0 = std::stoi(val);
        else if (key == "u0") c.u0 = std::stod(val);
        else if (key == "x1") x1 = std::stod(val);
        else if (key == "x2") x2 = std::stod(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else throw std::invalid_argument("config: unknown key: " + key);
      } catch (const std::invalid_argument&) {
        throw;
      } catch (const std::exception&) {
        throw std::invalid_argument("config: bad value for key " + key + ": " + val);
      }
    }
    c.obs_locations = {x1, x2};
    c.validate();
    return c;
  }

  std::string to_kv() const {
    std::ostringstream out;
    out.precision(17);
    out << "theta=" << drift << "\n"
        << "sigma2=" << sigma * sigma << "\n"
        << "tau2=" << tau2 << "\n"
        << "delta=" << delta << "\n"
        << "n_obs=" << n_obs << "\n"
        << "K0=" << K0 << "\n"
        << "M0=" << M0 << "\n"
        << "u0=" << u0 << "\n"
        << "x1=" << obs_locations.at(0) << "\n"
        << "x2=" << obs_locations.at(1) << "\n"
        << "seed=" << seed << "\n";
    return out.str();
  }

  static ModelConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv(buf.str());
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << to_kv();
  }
};

}  // namespace mismc2
