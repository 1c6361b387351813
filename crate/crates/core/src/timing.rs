//! Airtime of frame exchanges.
//!
//! All durations are in microseconds. Frames are ERP-OFDM: preamble and
//! SIGNAL field, then whole OFDM symbols carrying the 16-bit SERVICE field,
//! the PSDU and 6 tail bits, then the signal extension.

use crate::scenario::{AcParams, AccessMode, PhyParams, TrafficClassTable, NUM_ACS};

/// `AIFS = SIFS + AIFSN · slot`.
pub fn aifs(ac: &AcParams, phy: &PhyParams) -> f64 {
    phy.sifs_us + ac.aifsn as f64 * phy.slot_time_us
}

/// On-air duration of a `bytes`-long PSDU sent at `rate_mbps`.
pub fn frame_duration(bytes: u32, rate_mbps: f64, phy: &PhyParams) -> f64 {
    let bits = 16.0 + 6.0 + 8.0 * bytes as f64;
    let bits_per_symbol = rate_mbps * phy.ofdm_symbol_us;
    let symbols = (bits / bits_per_symbol - 1e-9).ceil();
    phy.preamble_plus_signal_us + phy.ofdm_symbol_us * symbols + phy.signal_extension_us
}

/// Busy-medium durations of one access, excluding the trailing AIFS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Airtime {
    pub phy: PhyParams,
    pub access: AccessMode,
    pub ack: f64,
    pub rts: f64,
    pub cts: f64,
}

impl Airtime {
    pub fn new(phy: &PhyParams, access: AccessMode) -> Self {
        Airtime {
            phy: *phy,
            access,
            ack: frame_duration(phy.ack_frame_bytes, phy.basic_rate_mbps, phy),
            rts: frame_duration(phy.rts_frame_bytes, phy.basic_rate_mbps, phy),
            cts: frame_duration(phy.cts_frame_bytes, phy.basic_rate_mbps, phy),
        }
    }

    /// `T_p`: data frame (MAC header + MSDU) at the data rate.
    pub fn payload(&self, msdu_bytes: u32) -> f64 {
        frame_duration(msdu_bytes + self.phy.mac_header_bytes, self.phy.data_rate_mbps, &self.phy)
    }

    /// Time a sender waits for a missing response before declaring failure:
    /// SIFS, the response frame at the basic rate and one slot.
    pub fn response_timeout(&self) -> f64 {
        let response = match self.access {
            AccessMode::Basic => self.ack,
            AccessMode::RtsCts => self.cts,
        };
        self.phy.sifs_us + response + self.phy.slot_time_us
    }

    pub fn ack_timeout(&self) -> f64 {
        self.phy.sifs_us + self.ack + self.phy.slot_time_us
    }

    /// Successful exchange from the first bit on air to the end of the ACK
    /// plus one propagation delay.
    pub fn success_busy(&self, payload: f64) -> f64 {
        let p = &self.phy;
        let d = p.propagation_delay_us;
        let data_ack = payload + d + p.sifs_us + self.ack + d;
        match self.access {
            AccessMode::Basic => data_ack,
            AccessMode::RtsCts => self.rts + d + p.sifs_us + self.cts + d + p.sifs_us + data_ack,
        }
    }

    /// Failed exchange given the longest data frame involved.
    pub fn collision_busy(&self, longest_payload: f64) -> f64 {
        match self.access {
            AccessMode::Basic => longest_payload + self.response_timeout(),
            AccessMode::RtsCts => self.rts + self.response_timeout(),
        }
    }
}

/// Per-class exchange durations used by the cycle-time model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeTimes {
    /// `T_p` per class.
    pub payload: Vec<f64>,
    /// `T_s` per class, including the trailing AIFS of the class's AC.
    pub success: Vec<f64>,
    /// `T_c` per class, including the trailing AIFS of the class's AC.
    pub collision: Vec<f64>,
    pub aifs: [Option<f64>; NUM_ACS],
    pub ack_timeout: [Option<f64>; NUM_ACS],
    pub slot: f64,
}

/// Exchange durations for every class of `table`.
///
/// The collision duration of class `j` uses the longest mean data frame
/// among the classes that can collide with it, i.e. those whose eligible
/// slot ranges overlap `j`'s.
pub fn exchange_times(table: &TrafficClassTable, phy: &PhyParams, access: AccessMode) -> ExchangeTimes {
    let air = Airtime::new(phy, access);
    let mut aifs_us = [None; NUM_ACS];
    let mut timeout = [None; NUM_ACS];
    for (ac, params) in table.acs.0.iter().enumerate() {
        if let Some(params) = params {
            aifs_us[ac] = Some(aifs(params, phy));
            timeout[ac] = Some(air.response_timeout());
        }
    }
    let payload: Vec<f64> = table.classes.iter().map(|c| air.payload(c.traffic.msdu_bytes())).collect();
    let w_min = (0..table.len()).map(|j| table.ac_params(j).cw_max).min().unwrap_or(0);
    let mut success = Vec::with_capacity(table.len());
    let mut collision = Vec::with_capacity(table.len());
    for (j, class) in table.classes.iter().enumerate() {
        let own_aifs = aifs_us[class.ac].expect("class AC is configured");
        success.push(air.success_busy(payload[j]) + own_aifs);
        let longest = table
            .classes
            .iter()
            .enumerate()
            .filter(|(_, other)| other.aifs_offset.max(class.aifs_offset) < w_min)
            .map(|(k, _)| payload[k])
            .fold(payload[j], f64::max);
        collision.push(air.collision_busy(longest) + own_aifs);
    }
    ExchangeTimes {
        payload,
        success,
        collision,
        aifs: aifs_us,
        ack_timeout: timeout,
        slot: phy.slot_time_us,
    }
}
