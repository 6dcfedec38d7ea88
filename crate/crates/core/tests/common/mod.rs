//! Reference computations that share no code with the library.

#![allow(dead_code)]

/// Fourth-order Runge-Kutta solution of `C dv/dt = (E - v)/r_i - v/R_L`.
/// `None` resistances are open circuits.
pub fn rk4_voltage(v0: f64, t: f64, c: f64, e: f64, r_i: Option<f64>, r_l: Option<f64>) -> f64 {
    let g_i = r_i.map_or(0.0, |r| 1.0 / r);
    let g_l = r_l.map_or(0.0, |r| 1.0 / r);
    let f = |v: f64| (g_i * (e - v) - g_l * v) / c;
    let stiffness = (g_i + g_l) / c;
    if stiffness == 0.0 || t == 0.0 {
        return v0;
    }
    let tau = 1.0 / stiffness;
    let v_fixed = g_i * e / (g_i + g_l);
    let h_max = (tau / 50.0).min(t / 1000.0);
    let mut v = v0;
    let mut elapsed = 0.0;
    while elapsed < t {
        let remaining = t - elapsed;
        // the rest of the trajectory can move v by at most |v - v_fixed| = |f| * tau,
        // which stalls at rounding level when v_fixed is non-zero
        if f(v).abs() * tau.min(remaining) < 1e-17 + 1e-13 * v_fixed.abs() {
            break;
        }
        let h = h_max.min(remaining);
        let k1 = f(v);
        let k2 = f(v + 0.5 * h * k1);
        let k3 = f(v + 0.5 * h * k2);
        let k4 = f(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        elapsed += h;
    }
    v
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// LoRa airtime in seconds from the modem designer's formula: explicit
/// header, CRC on, coding rate 4/5, 8 preamble symbols, low data rate
/// optimization for SF11 and SF12.
pub fn lora_airtime(payload: u32, sf: u32, bw: f64) -> f64 {
    let t_sym = 2f64.powi(sf as i32) / bw;
    let t_preamble = (8.0 + 4.25) * t_sym;
    let de = if sf >= 11 { 1.0 } else { 0.0 };
    let crc = 1.0;
    let header = 0.0;
    let cr = 1.0;
    let x = (8.0 * payload as f64 - 4.0 * sf as f64 + 28.0 + 16.0 * crc - 20.0 * header)
        / (4.0 * (sf as f64 - 2.0 * de));
    let n_payload = 8.0 + (x.ceil() * (cr + 4.0)).max(0.0);
    t_preamble + n_payload * t_sym
}

/// `|a - b| <= rel * max(|b|, floor)`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(floor)
}

/// The voltage-trace walkthrough scenario: constant 1 mW harvest, DR3,
/// first uplink at 80 s and one every 80 s, starting from 3.3 V.
pub fn walkthrough_scenario() -> capsim::ScenarioConfig {
    let mut cfg = capsim::ScenarioConfig::default();
    cfg.capacitor.capacitance = WALKTHROUGH_CAPACITANCE;
    cfg.harvester.power = 0.001;
    cfg.lorawan.data_rate = 3;
    cfg.lorawan.rx_window_symbols = 12;
    cfg.scenario.first_packet_offset = Some(80.0);
    cfg.scenario.packet_period = 80.0;
    cfg.scenario.duration = 300.0;
    cfg.trace.voltage = true;
    cfg
}

/// Capacitance that puts the voltage after the first uplink at 2.44 V.
pub const WALKTHROUGH_CAPACITANCE: f64 = 0.006;
