import hashlib, math
M=(1<<64)-1
class R:
    def __init__(s,seed): s.s=seed
    def u(s):
        s.s=(s.s+0x9E3779B97F4A7C15)&M; z=s.s
        z=((z^(z>>30))*0xBF58476D1CE4E5B9)&M; z=((z^(z>>27))*0x94D049BB133111EB)&M
        return z^(z>>31)
    def below(s,n):
        t=((1<<64)-n)%n
        while True:
            x=s.u()
            if x>=t: return x%n
    def shuffle(s,a):
        for i in range(len(a)-1,0,-1):
            j=s.below(i+1); a[i],a[j]=a[j],a[i]
def der(seed,label): return R(int.from_bytes(hashlib.sha256(seed.to_bytes(8,'little')+label.encode()).digest()[:8],'little'))
ids=[f"c{i:03}" for i in range(100)]; lem={f"c{i:03}":f"word{i}" for i in range(100)}
def demos(n,seed,N=100,ex=None):
    pool=[i for i in ids[:N] if i!=ex]; o=list(range(len(pool))); der(seed,"demonstrations").shuffle(o)
    return [lem[pool[i]] for i in o[:n]]
print("demos", demos(3,42))
d=demos(24,1); vocab=sorted(lem.values()); pool=[w for w in vocab if w not in set(d)]
der(1,"mis").shuffle(pool); print("mis", pool[:24])
p=list(range(10)); der(3,"rand").shuffle(p); print("perm",p)
def pw(s,ratio,seed):
    w=s.split(' '); W=len(w); take=max(0,math.ceil(ratio*W-1e-9))
    if take<2: return s
    r=der(seed,"permute_words"); pos=list(range(W)); r.shuffle(pos); ch=sorted(pos[:take])
    words=[w[i] for i in ch]; r.shuffle(words)
    for i,x in zip(ch,words): w[i]=x
    return ' '.join(w)
print("pw", pw("one two three four five six seven eight nine ten",0.6,5))
for s in range(10): print("ab",s,pw("a b",1.0,s))

def f64(r): return (r.u()>>11)*(1.0/(1<<53))
def normal(r):
    u1=1.0-f64(r); u2=f64(r)
    return math.sqrt(-2.0*math.log(u1))*math.cos(2.0*math.pi*u2)
import struct
cent={"even":[1.0,0.0,0.0],"odd":[0.0,1.0,0.0]}
h=hashlib.sha256()
for i in range(10):
    prompt=f"thing number {i} can be called as"
    r=der(5,"hidden\0"+prompt); c=cent["even" if i%2==0 else "odd"]
    h.update(f"c{i}".encode())
    for x in c: h.update(struct.pack('<d', x+0.25*normal(r)))
print("hidden_nl_digest", h.hexdigest())
