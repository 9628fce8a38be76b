use criterion::{black_box, criterion_group, criterion_main, Criterion};
use moco_bench::desk_volume;
use moco_core::nn::{boundary_tensor, xnet_forward, znet_forward, Mode, Tensor4};
use moco_core::simulate::{generate_phantom, sample_axial_motion};
use moco_core::{NetConfig, NetKind, Network, VesselKind, VesselMap};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn znet(c: &mut Criterion) {
    let (v, b) = desk_volume(2);
    let net = Network::new(NetKind::Z, NetConfig::z(64, 128), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("znet/forward", |bench| {
        bench.iter(|| znet_forward(black_box(&v), Some(&b), &net, false, &mut rng).unwrap())
    });

    let x = Tensor4::stack(&vec![Tensor4::from_volume(&v); 4]).unwrap();
    let seg = Tensor4::stack(&vec![boundary_tensor(&b).unwrap(); 4]).unwrap();
    c.bench_function("znet/forward_backward_batch4", |bench| {
        bench.iter(|| {
            let (g, out) = net.forward(&x, Some(&seg), &mut Mode::Eval).unwrap();
            let grad = Tensor4::new(g.value(out).shape(), vec![1.0; g.value(out).data().len()]).unwrap();
            g.backward(out, grad).unwrap()
        })
    });
}

fn xnet(c: &mut Criterion) {
    let p = generate_phantom(&Default::default()).unwrap();
    let s = VesselMap::new(128, 24, p.vessels.values().to_vec(), VesselKind::Probability).unwrap();
    let net = Network::new(NetKind::X, NetConfig::x(128), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("xnet/forward", |bench| {
        bench.iter(|| xnet_forward(black_box(&s), &net, false, &mut rng).unwrap())
    });
    c.bench_function("sample_axial_motion/512x49", |bench| {
        bench.iter(|| sample_axial_motion(black_box(3), 49, 512, 1.0, 1.0).unwrap())
    });
}

criterion_group!(benches, znet, xnet);
criterion_main!(benches);
