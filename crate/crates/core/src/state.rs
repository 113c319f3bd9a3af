//! Inversion state and observation containers.
//!
//! The state of one assimilation window holds a coarse SSH component plus two
//! anomaly components: `anomaly_obs` enters only the along-track data term,
//! `anomaly_rec` enters only the reconstruction. The reconstructed SSH is
//! `coarse + anomaly_rec`. The SSH-SST variant carries an SST component too.
//!
//! Solvers operate on a packed `C × W × W` array whose channels are grouped
//! component-major, time-minor: `[coarse(t0..tT) | anomaly_obs | anomaly_rec |
//! sst?]`.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Mask, SpaceTimeField, SpaceTimeGrid};

/// Which components the state carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    SshOnly,
    SshSst,
}

impl StateKind {
    pub fn n_components(&self) -> usize {
        match self {
            StateKind::SshOnly => 3,
            StateKind::SshSst => 4,
        }
    }
}

/// Channel bookkeeping for the packed representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLayout {
    pub kind: StateKind,
    /// Frames per component.
    pub n_time: usize,
}

impl ChannelLayout {
    pub fn new(kind: StateKind, n_time: usize) -> Self {
        ChannelLayout { kind, n_time }
    }

    pub fn n_channels(&self) -> usize {
        self.kind.n_components() * self.n_time
    }

    pub fn coarse(&self) -> std::ops::Range<usize> {
        0..self.n_time
    }

    pub fn anomaly_obs(&self) -> std::ops::Range<usize> {
        self.n_time..2 * self.n_time
    }

    pub fn anomaly_rec(&self) -> std::ops::Range<usize> {
        2 * self.n_time..3 * self.n_time
    }

    pub fn sst(&self) -> Option<std::ops::Range<usize>> {
        match self.kind {
            StateKind::SshOnly => None,
            StateKind::SshSst => Some(3 * self.n_time..4 * self.n_time),
        }
    }
}

/// SSH-only inversion state.
#[derive(Debug, Clone, PartialEq)]
pub struct SshState {
    pub coarse: SpaceTimeField,
    pub anomaly_obs: SpaceTimeField,
    pub anomaly_rec: SpaceTimeField,
}

impl SshState {
    pub fn new(coarse: SpaceTimeField, anomaly_obs: SpaceTimeField, anomaly_rec: SpaceTimeField) -> Result<Self> {
        let g = *coarse.grid();
        for (name, f) in [("anomaly_obs", &anomaly_obs), ("anomaly_rec", &anomaly_rec)] {
            if f.grid() != &g {
                return Err(Error::dim("SshState", format!("{name} on grid {:?}", g.shape()), format!("{:?}", f.grid().shape())));
            }
        }
        Ok(SshState { coarse, anomaly_obs, anomaly_rec })
    }

    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        SshState {
            coarse: SpaceTimeField::zeros(grid),
            anomaly_obs: SpaceTimeField::zeros(grid),
            anomaly_rec: SpaceTimeField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.coarse.grid()
    }
}

/// SSH state extended with an SST component.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalState {
    pub ssh: SshState,
    pub sst: SpaceTimeField,
}

impl MultimodalState {
    pub fn new(ssh: SshState, sst: SpaceTimeField) -> Result<Self> {
        if sst.grid() != ssh.grid() {
            return Err(Error::dim(
                "MultimodalState",
                format!("sst on grid {:?}", ssh.grid().shape()),
                format!("{:?}", sst.grid().shape()),
            ));
        }
        Ok(MultimodalState { ssh, sst })
    }
}

/// Either state variant.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    SshOnly(SshState),
    SshSst(MultimodalState),
}

impl State {
    pub fn kind(&self) -> StateKind {
        match self {
            State::SshOnly(_) => StateKind::SshOnly,
            State::SshSst(_) => StateKind::SshSst,
        }
    }

    pub fn ssh(&self) -> &SshState {
        match self {
            State::SshOnly(s) => s,
            State::SshSst(m) => &m.ssh,
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.ssh().grid()
    }

    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout::new(self.kind(), self.grid().n_time)
    }
}

/// Reconstructed SSH: `coarse + anomaly_rec`. The observation anomaly never
/// enters the reconstruction.
pub fn reconstruct_ssh(state: &State) -> SpaceTimeField {
    let ssh = state.ssh();
    let data = ssh.coarse.data() + ssh.anomaly_rec.data();
    SpaceTimeField::new(*ssh.grid(), data).expect("sum of finite fields is finite")
}

/// Packs a state into `C × W × W` channels, component-major then time.
pub fn pack_state(state: &State) -> Array3<f64> {
    let grid = state.grid();
    let layout = state.layout();
    let mut packed = Array3::zeros((layout.n_channels(), grid.w, grid.w));
    let ssh = state.ssh();
    let components: Vec<&SpaceTimeField> = match state {
        State::SshOnly(_) => vec![&ssh.coarse, &ssh.anomaly_obs, &ssh.anomaly_rec],
        State::SshSst(m) => vec![&ssh.coarse, &ssh.anomaly_obs, &ssh.anomaly_rec, &m.sst],
    };
    for (c_idx, comp) in components.iter().enumerate() {
        for t in 0..grid.n_time {
            packed
                .index_axis_mut(Axis(0), c_idx * grid.n_time + t)
                .assign(&comp.frame(t));
        }
    }
    packed
}

/// Inverse of [`pack_state`]. Fails with a dimension error naming the expected
/// and actual channel counts when `packed` does not match `kind` and `grid`.
pub fn unpack_state(packed: &Array3<f64>, kind: StateKind, grid: SpaceTimeGrid) -> Result<State> {
    let layout = ChannelLayout::new(kind, grid.n_time);
    let shape = packed.shape();
    if shape != [layout.n_channels(), grid.w, grid.w] {
        return Err(Error::dim(
            "unpack_state",
            format!("{} channels of {}x{}", layout.n_channels(), grid.w, grid.w),
            format!("{} channels of {}x{}", shape[0], shape[1], shape[2]),
        ));
    }
    let component = |range: std::ops::Range<usize>| -> Result<SpaceTimeField> {
        let mut data = Array3::zeros(grid.shape());
        for (t, c) in range.enumerate() {
            data.index_axis_mut(Axis(0), t).assign(&packed.index_axis(Axis(0), c));
        }
        SpaceTimeField::new(grid, data)
    };
    let ssh = SshState::new(
        component(layout.coarse())?,
        component(layout.anomaly_obs())?,
        component(layout.anomaly_rec())?,
    )?;
    match kind {
        StateKind::SshOnly => Ok(State::SshOnly(ssh)),
        StateKind::SshSst => {
            let sst = component(layout.sst().expect("ssh_sst layout has sst range"))?;
            Ok(State::SshSst(MultimodalState::new(ssh, sst)?))
        }
    }
}

/// Observations available to one assimilation window.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    /// Along-track SSH samples; 0.0 at gap cells.
    pub ssh_alongtrack: SpaceTimeField,
    /// True where `ssh_alongtrack` carries an observation.
    pub ssh_mask: Mask,
    /// Dense coarse SSH (an optimal-interpolation product).
    pub ssh_coarse: SpaceTimeField,
    /// Dense SST, when the sensing scenario provides it.
    pub sst: Option<SpaceTimeField>,
}

impl ObservationSet {
    pub fn new(
        ssh_alongtrack: SpaceTimeField,
        ssh_mask: Mask,
        ssh_coarse: SpaceTimeField,
        sst: Option<SpaceTimeField>,
    ) -> Result<Self> {
        let g = *ssh_alongtrack.grid();
        if ssh_mask.grid() != &g {
            return Err(Error::dim(
                "ObservationSet",
                format!("ssh_mask on grid {:?}", g.shape()),
                format!("{:?}", ssh_mask.grid().shape()),
            ));
        }
        if ssh_coarse.grid() != &g {
            return Err(Error::dim(
                "ObservationSet",
                format!("ssh_coarse on grid {:?}", g.shape()),
                format!("{:?}", ssh_coarse.grid().shape()),
            ));
        }
        if let Some(sst) = &sst {
            if sst.grid() != &g {
                return Err(Error::dim(
                    "ObservationSet",
                    format!("sst on grid {:?}", g.shape()),
                    format!("{:?}", sst.grid().shape()),
                ));
            }
        }
        // Canonical storage: gap cells hold exactly 0.0.
        let ssh_alongtrack = SpaceTimeField::new_masked(g, ssh_alongtrack.into_data(), &ssh_mask)?;
        Ok(ObservationSet { ssh_alongtrack, ssh_mask, ssh_coarse, sst })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.ssh_alongtrack.grid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(8, 0.05, 1.0, 3).unwrap()
    }

    fn random_field(grid: SpaceTimeGrid, rng: &mut ChaCha12Rng) -> SpaceTimeField {
        let data = Array3::from_shape_fn(grid.shape(), |_| rng.gen_range(-1.0..1.0));
        SpaceTimeField::new(grid, data).unwrap()
    }

    #[test]
    fn pack_orders_components_then_time() {
        let g = grid();
        let make = |base: f64| {
            let mut data = Array3::zeros(g.shape());
            for t in 0..g.n_time {
                data.index_axis_mut(Axis(0), t).fill(base + t as f64);
            }
            SpaceTimeField::new(g, data).unwrap()
        };
        let state = State::SshSst(MultimodalState {
            ssh: SshState {
                coarse: make(100.0),
                anomaly_obs: make(200.0),
                anomaly_rec: make(300.0),
            },
            sst: make(400.0),
        });
        let packed = pack_state(&state);
        assert_eq!(packed.shape(), [12, 8, 8]);
        for (c_idx, base) in [100.0, 200.0, 300.0, 400.0].iter().enumerate() {
            for t in 0..g.n_time {
                let ch = c_idx * g.n_time + t;
                assert_eq!(packed[[ch, 4, 4]], base + t as f64, "channel {ch}");
            }
        }
    }

    #[test]
    fn pack_unpack_roundtrip_both_kinds() {
        let g = grid();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..4 {
            let ssh = SshState::new(
                random_field(g, &mut rng),
                random_field(g, &mut rng),
                random_field(g, &mut rng),
            )
            .unwrap();
            let state = State::SshOnly(ssh.clone());
            let back = unpack_state(&pack_state(&state), StateKind::SshOnly, g).unwrap();
            assert_eq!(back, state);

            let state = State::SshSst(MultimodalState::new(ssh, random_field(g, &mut rng)).unwrap());
            let back = unpack_state(&pack_state(&state), StateKind::SshSst, g).unwrap();
            assert_eq!(back, state);
        }
    }

    #[test]
    fn unpack_names_channel_counts_on_mismatch() {
        let g = grid();
        let packed = Array3::zeros((9, 8, 8));
        let err = unpack_state(&packed, StateKind::SshSst, g).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("12"), "missing expected count: {msg}");
        assert!(msg.contains("9"), "missing actual count: {msg}");
    }

    #[test]
    fn reconstruct_adds_coarse_and_rec_anomaly_only() {
        let g = grid();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let ssh = SshState::new(
            random_field(g, &mut rng),
            random_field(g, &mut rng),
            random_field(g, &mut rng),
        )
        .unwrap();
        let rec = reconstruct_ssh(&State::SshOnly(ssh.clone()));
        for ((t, i, j), v) in rec.data().indexed_iter() {
            let want = ssh.coarse.data()[[t, i, j]] + ssh.anomaly_rec.data()[[t, i, j]];
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn observation_set_zero_fills_gaps() {
        let g = grid();
        let mut mask = Mask::all_false(g);
        mask.set(0, 2, 2, true);
        let mut track = Array3::from_elem(g.shape(), 9.0);
        track[[0, 2, 2]] = 1.5;
        let obs = ObservationSet::new(
            SpaceTimeField::new(g, track).unwrap(),
            mask,
            SpaceTimeField::zeros(g),
            None,
        )
        .unwrap();
        assert_eq!(obs.ssh_alongtrack.data()[[0, 2, 2]], 1.5);
        assert_eq!(obs.ssh_alongtrack.data()[[1, 3, 3]], 0.0);
    }
}
