use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::{OracleConfig, EPS0};
use crate::error::{Error, Result};
use crate::numerics::fd::FluxStencil;
use crate::numerics::grid::{Field2D, GridSpec, Unit};

/// Row ranges of each layer, bottom (substrate contact) to top (gate).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRows {
    pub substrate: Range<usize>,
    pub channel: Range<usize>,
    pub hzo_bottom: Range<usize>,
    pub tdl: Range<usize>,
    pub hzo_top: Range<usize>,
    pub gate: Range<usize>,
}

impl LayerRows {
    /// Rows from the bottom HZO layer to the top HZO layer inclusive.
    pub fn stack(&self) -> Range<usize> {
        self.hzo_bottom.start..self.hzo_top.end
    }

    /// Topmost row of the channel layer.
    pub fn surface_row(&self) -> usize {
        self.channel.end - 1
    }

    /// Row holding trapped electrons (bottom HZO / TDL boundary).
    pub fn trap_n_row(&self) -> usize {
        self.tdl.start
    }

    /// Row holding trapped holes (TDL / top HZO boundary).
    pub fn trap_p_row(&self) -> usize {
        self.tdl.end - 1
    }
}

/// Binary region masks, one byte per cell (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masks {
    pub stack: Vec<u8>,
    pub fe: Vec<u8>,
    pub interface_n: Vec<u8>,
    pub interface_p: Vec<u8>,
    pub channel: Vec<u8>,
}

impl Masks {
    pub const NAMES: [&'static str; 5] = ["stack", "fe", "interface_n", "interface_p", "channel"];

    pub fn planes(&self) -> [&Vec<u8>; 5] {
        [&self.stack, &self.fe, &self.interface_n, &self.interface_p, &self.channel]
    }

    pub fn from_planes(mut planes: Vec<Vec<u8>>) -> Result<Self> {
        if planes.len() != 5 {
            return Err(Error::Format(format!("expected 5 mask planes, got {}", planes.len())));
        }
        let channel = planes.pop().unwrap();
        let interface_p = planes.pop().unwrap();
        let interface_n = planes.pop().unwrap();
        let fe = planes.pop().unwrap();
        let stack = planes.pop().unwrap();
        Ok(Self {
            stack,
            fe,
            interface_n,
            interface_p,
            channel,
        })
    }
}

/// Device layout on a grid: permittivity map, masks and Dirichlet cells.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub grid: GridSpec,
    pub rows: LayerRows,
    /// Absolute permittivity, F/m.
    pub eps: Field2D,
    pub masks: Masks,
    /// Cells held at 0 V: the bottom row and every gate row.
    pub dirichlet: Vec<bool>,
    /// Thickness of each HZO layer actually realised on the grid, nm.
    pub hzo_layer_nm: f64,
    /// Flux-form `div(eps grad .)` for this permittivity map.
    pub stencil: FluxStencil<f64>,
}

fn rows_for(thickness_nm: f64, dy: f64, what: &str) -> Result<usize> {
    let n = (thickness_nm / dy).round() as usize;
    if n == 0 {
        return Err(Error::Geometry(format!(
            "{what} thickness {thickness_nm} nm resolves to zero rows at dy={dy} nm"
        )));
    }
    Ok(n)
}

/// Lays out the substrate / channel / HZO / TDL / HZO / gate stack.
pub fn build_geometry(t_hzo: f64, config: &OracleConfig, grid: &GridSpec) -> Result<Geometry> {
    grid.validate()?;
    if !(t_hzo > 0.0) {
        return Err(Error::Geometry(format!("t_hzo must be positive, got {t_hzo}")));
    }
    let dy = grid.dy;
    let hzo = rows_for(config.layer_thickness(t_hzo), dy, "HZO")?;
    let tdl = rows_for(config.t_tdl_nm, dy, "TDL")?;
    let channel = rows_for(config.t_channel_nm, dy, "channel")?;
    let gate = rows_for(config.t_gate_nm, dy, "gate")?;
    let used = channel + 2 * hzo + tdl + gate;
    if used + 1 > grid.ny {
        return Err(Error::Geometry(format!(
            "stack needs {used} rows plus a substrate row but the grid has {} (t_hzo={t_hzo} nm)",
            grid.ny
        )));
    }
    let sub = grid.ny - used;
    let mut at = 0;
    let mut take = |n: usize| {
        let r = at..at + n;
        at += n;
        r
    };
    let rows = LayerRows {
        substrate: take(sub),
        channel: take(channel),
        hzo_bottom: take(hzo),
        tdl: take(tdl),
        hzo_top: take(hzo),
        gate: take(gate),
    };

    let n = grid.len();
    let mut eps = Field2D::zeros(*grid, Unit::FaradPerM);
    let mut masks = Masks {
        stack: vec![0; n],
        fe: vec![0; n],
        interface_n: vec![0; n],
        interface_p: vec![0; n],
        channel: vec![0; n],
    };
    let mut dirichlet = vec![false; n];
    let (sd_lo, sd_hi) = (grid.sd_extent, grid.width_nm() - grid.sd_extent);
    for ix in 0..grid.nx {
        let x = grid.x_center(ix);
        for iy in 0..grid.ny {
            let i = grid.idx(ix, iy);
            let in_fe = rows.hzo_bottom.contains(&iy) || rows.hzo_top.contains(&iy);
            let eps_r = if rows.gate.contains(&iy) {
                config.eps_gate
            } else if in_fe {
                config.eps_hzo
            } else if rows.tdl.contains(&iy) {
                config.eps_tdl
            } else {
                config.eps_si
            };
            eps.values[i] = eps_r * EPS0;
            masks.stack[i] = rows.stack().contains(&iy) as u8;
            masks.fe[i] = in_fe as u8;
            masks.interface_n[i] = (iy == rows.trap_n_row()) as u8;
            masks.interface_p[i] = (iy == rows.trap_p_row()) as u8;
            masks.channel[i] = (rows.channel.contains(&iy) && x > sd_lo && x < sd_hi) as u8;
            dirichlet[i] = iy == 0 || rows.gate.contains(&iy);
        }
    }
    let stencil = FluxStencil::new(grid, &eps.values);
    Ok(Geometry {
        stencil,
        grid: *grid,
        rows,
        eps,
        masks,
        dirichlet,
        hzo_layer_nm: hzo as f64 * dy,
    })
}
